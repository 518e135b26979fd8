#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <set>

#include "cmsnet/builder.hpp"
#include "helpers.hpp"

using namespace cmsnet;

namespace {

std::size_t params_with_prefix(const Graph& g, const std::string& prefix) {
    std::size_t total = 0;
    for (const auto& [name, t] : g.weights)
        if (name.rfind(prefix, 0) == 0) total += t.size();
    return total;
}

}  // namespace

TEST_CASE("arrangement names resolve to the documented settings") {
    struct Row {
        const char* name;
        int os;
        Pyramid pyr;
        bool shortcut;
    };
    const Row rows[] = {
        {"CM0", 8, Pyramid::GPP, false},  {"CM1", 8, Pyramid::SPP, false},
        {"CM2", 8, Pyramid::ASPP, false}, {"CM3", 16, Pyramid::GPP, false},
        {"CM4", 16, Pyramid::SPP, false}, {"CM5", 16, Pyramid::ASPP, false},
        {"CM6", 16, Pyramid::GPP, true},  {"CM7", 16, Pyramid::SPP, true},
        {"CM8", 16, Pyramid::ASPP, true},
    };
    for (const Row& r : rows) {
        ArrangementConfig cfg = arrangement_by_name(r.name);
        REQUIRE(cfg.output_stride == r.os);
        REQUIRE(cfg.pyramid == r.pyr);
        REQUIRE(cfg.shortcut == r.shortcut);
    }
    REQUIRE(arrangement_by_name("CMSNet-M5").output_stride == 16);
    REQUIRE(arrangement_by_name("CMSNet-M5").pyramid == Pyramid::ASPP);
    REQUIRE_THROWS_AS(arrangement_by_name("CM9"), config_error);
    REQUIRE_THROWS_AS(arrangement_by_name("resnet"), config_error);
}

TEST_CASE("config validation rejects unsupported combinations") {
    ArrangementConfig cfg;
    cfg.output_stride = 12;
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
    cfg.output_stride = 8;
    cfg.shortcut = true;  // stride-4 tap only exists in the OS16 decoder
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
    cfg.shortcut = false;
    cfg.num_classes = 1;
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
    cfg.num_classes = 10;
    REQUIRE_NOTHROW(cfg.validate());
}

TEST_CASE("backbone feature heights at 483x769 follow the halving ladder") {
    Graph g16 = build_arrangement("CM3", 10, 483, 769);
    auto shapes = infer_shapes(g16, {1, 483, 769, 3});

    // collect the distinct backbone spatial heights in graph order
    std::vector<int> heights = {483};
    std::vector<int> widths = {769};
    for (const Node& nd : g16.nodes) {
        if (nd.kind != OpKind::Conv) continue;
        if (nd.weight_name.rfind("backbone.", 0) != 0) continue;
        int h = shapes[nd.id].h, w = shapes[nd.id].w;
        if (h != heights.back()) {
            heights.push_back(h);
            widths.push_back(w);
        }
    }
    REQUIRE(heights == std::vector<int>{483, 242, 121, 61, 31});
    REQUIRE(widths == std::vector<int>{769, 385, 193, 97, 49});

    Graph g8 = build_arrangement("CM0", 10, 483, 769);
    auto shapes8 = infer_shapes(g8, {1, 483, 769, 3});
    int final_h = 0;
    for (const Node& nd : g8.nodes)
        if (nd.kind == OpKind::Conv && nd.weight_name.rfind("backbone.", 0) == 0)
            final_h = shapes8[nd.id].h;
    REQUIRE(final_h == 61);  // OS8 stops one halving earlier
}

TEST_CASE("output stride limits convert strides to dilation") {
    Graph g8 = build_arrangement("CM0", 10, 64, 96);
    int max_dilation = 1;
    int stride2_convs = 0;
    for (const Node& nd : g8.nodes) {
        if (nd.kind != OpKind::Conv) continue;
        if (nd.weight_name.rfind("backbone.", 0) != 0) continue;
        max_dilation = std::max(max_dilation, nd.conv.dilation);
        if (nd.conv.stride == 2) ++stride2_convs;
    }
    REQUIRE(max_dilation == 2);   // the converted stride doubles the rate once
    REQUIRE(stride2_convs == 3);  // conv1 plus two bottleneck group entries

    Graph g16 = build_arrangement("CM3", 10, 64, 96);
    int max_dilation16 = 1;
    int stride2_convs16 = 0;
    for (const Node& nd : g16.nodes) {
        if (nd.kind != OpKind::Conv) continue;
        if (nd.weight_name.rfind("backbone.", 0) != 0) continue;
        max_dilation16 = std::max(max_dilation16, nd.conv.dilation);
        if (nd.conv.stride == 2) ++stride2_convs16;
    }
    REQUIRE(max_dilation16 == 1);  // budget covers every stride at OS16
    REQUIRE(stride2_convs16 == 4);
}

TEST_CASE("backbone has residual adds and the expected trunk size") {
    Graph g = build_arrangement("CM3", 10, 64, 96);
    int adds = 0;
    for (const Node& nd : g.nodes)
        if (nd.kind == OpKind::Add) ++adds;
    // repeats with stride 1 and matching channels: 1+2+3+2+2 = 10
    REQUIRE(adds == 10);

    // the trunk weight total tracks the published 1.84M figure
    std::size_t backbone = params_with_prefix(g, "backbone.");
    REQUIRE(backbone > static_cast<std::size_t>(1.84e6 * 0.95));
    REQUIRE(backbone < static_cast<std::size_t>(1.84e6 * 1.05));
}

TEST_CASE("parameter counts are independent of input resolution and OS") {
    Graph a = build_arrangement("CM3", 10, 64, 96);
    Graph b = build_arrangement("CM3", 10, 128, 192);
    REQUIRE(count_params(a) == count_params(b));

    // OS only changes strides/dilations, never tensor shapes of the weights
    REQUIRE(count_params(build_arrangement("CM0", 10, 64, 96)) ==
            count_params(build_arrangement("CM3", 10, 64, 96)));
}

TEST_CASE("head cost ordering: SPP < GPP < ASPP at fixed OS") {
    std::size_t gpp = count_params(build_arrangement("CM3", 10, 64, 96));
    std::size_t spp = count_params(build_arrangement("CM4", 10, 64, 96));
    std::size_t aspp = count_params(build_arrangement("CM5", 10, 64, 96));
    REQUIRE(spp < gpp);
    REQUIRE(gpp < aspp);

    // shortcut adds a small projection on top of each
    REQUIRE(count_params(build_arrangement("CM6", 10, 64, 96)) > gpp);
    REQUIRE(count_params(build_arrangement("CM7", 10, 64, 96)) > spp);
    REQUIRE(count_params(build_arrangement("CM8", 10, 64, 96)) > aspp);
}

TEST_CASE("every arrangement produces full-resolution per-class logits") {
    for (const char* name : {"CM0", "CM1", "CM2", "CM3", "CM4", "CM5", "CM6",
                             "CM7", "CM8"}) {
        Graph g = build_arrangement(name, 5, 48, 64);
        std::mt19937 rng(1);
        Tensor in = testutil::random_tensor(1, 48, 64, 3, rng, 0.5f);
        Tensor out = forward(g, in);
        INFO(name);
        REQUIRE(out.h == 48);
        REQUIRE(out.w == 64);
        REQUIRE(out.c == 5);
        REQUIRE(out.all_finite());
    }
}

TEST_CASE("builder is deterministic per seed") {
    Graph a = build_arrangement("CM4", 10, 48, 64, 3, 42);
    Graph b = build_arrangement("CM4", 10, 48, 64, 3, 42);
    Graph c = build_arrangement("CM4", 10, 48, 64, 3, 43);
    REQUIRE(a.weights.size() == b.weights.size());
    for (const auto& [name, t] : a.weights) {
        REQUIRE(t.data == b.weights.at(name).data);
    }
    bool any_diff = false;
    for (const auto& [name, t] : a.weights)
        if (t.data != c.weights.at(name).data) any_diff = true;
    REQUIRE(any_diff);
}

TEST_CASE("argmax prediction breaks ties toward the lowest class id") {
    Tensor logits(1, 1, 2, 3);
    logits.data = {0.5f, 0.5f, 0.1f,   // tie between 0 and 1 -> 0
                   0.1f, 0.9f, 0.9f};  // tie between 1 and 2 -> 1
    auto mask = predict_from_logits(logits);
    REQUIRE(mask == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("weights file roundtrip preserves the forward pass") {
    Graph g = build_arrangement("CM3", 4, 32, 48);
    std::mt19937 rng(2);
    Tensor in = testutil::random_tensor(1, 32, 48, 3, rng, 0.5f);
    Tensor before = forward(g, in);

    auto path = std::filesystem::temp_directory_path() / "cmsnet_w_test.bin";
    save_weights(g, path.string());
    Graph g2 = build_arrangement("CM3", 4, 32, 48, 3, 99);  // different init
    g2.weights = load_weights(path.string());
    Tensor after = forward(g2, in);
    std::filesystem::remove(path);

    REQUIRE(before.data == after.data);
    REQUIRE_THROWS_AS(load_weights("/nonexistent/weights.bin"), data_error);
}

TEST_CASE("arrangement config JSON roundtrip") {
    ArrangementConfig cfg = arrangement_by_name("CM7");
    cfg.num_classes = 6;
    cfg.input_h = 100;
    cfg.input_w = 200;
    auto j = config_to_json(cfg);
    ArrangementConfig back = config_from_json(j);
    REQUIRE(back.output_stride == cfg.output_stride);
    REQUIRE(back.pyramid == cfg.pyramid);
    REQUIRE(back.shortcut == cfg.shortcut);
    REQUIRE(back.num_classes == 6);
    REQUIRE(back.input_h == 100);
    REQUIRE(back.input_w == 200);

    auto missing = j;
    missing.erase("pyramid");
    REQUIRE_THROWS_AS(config_from_json(missing), config_error);
    auto bad = j;
    bad["pyramid"] = "FPN";
    REQUIRE_THROWS_AS(config_from_json(bad), config_error);
}

TEST_CASE("shortcut arrangements tap the stride-4 feature") {
    Graph g = build_arrangement("CM6", 10, 64, 96);
    auto shapes = infer_shapes(g, {1, 64, 96, 3});
    bool found_tap_proj = false;
    for (const Node& nd : g.nodes)
        if (nd.kind == OpKind::Conv && nd.weight_name == "decoder.shortcut.weight") {
            found_tap_proj = true;
            Dims4 in = shapes[nd.inputs[0]];
            REQUIRE(in.h == 16);  // 64/4
            REQUIRE(in.w == 24);  // 96/4
            REQUIRE(in.c == 24);
        }
    REQUIRE(found_tap_proj);
}
