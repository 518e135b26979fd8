#pragma once

#include <optional>
#include <random>
#include <string>

#include "cmsnet/graph.hpp"
#include "json.hpp"

namespace cmsnet {

enum class Backbone { MobileNetV2 };
enum class Pyramid { GPP, SPP, ASPP };

inline const char* pyramid_name(Pyramid p) {
    switch (p) {
        case Pyramid::GPP: return "GPP";
        case Pyramid::SPP: return "SPP";
        case Pyramid::ASPP: return "ASPP";
    }
    return "?";
}

// Declarative description of one arrangement.
struct ArrangementConfig {
    std::string name = "custom";
    Backbone backbone = Backbone::MobileNetV2;
    int output_stride = 16;  // 8 or 16
    Pyramid pyramid = Pyramid::GPP;
    bool shortcut = false;
    int num_classes = 10;
    int input_h = 483;
    int input_w = 769;
    int input_c = 3;

    void validate() const {
        if (output_stride != 8 && output_stride != 16)
            throw config_error("output_stride must be 8 or 16");
        if (shortcut && output_stride != 16)
            throw config_error("shortcut requires output_stride 16");
        if (num_classes < 2) throw config_error("num_classes must be >= 2");
        if (input_h < 1 || input_w < 1 || input_c < 1)
            throw config_error("input dims must be positive");
    }
};

// e=expansion, d=out channels, n=repeats, s=stride of the first block.
struct BottleneckSpec {
    int expansion;
    int out_channels;
    int repeats;
    int stride;
    int dilation = 1;
};

inline const std::array<BottleneckSpec, 7>& mobilenetv2_groups() {
    static const std::array<BottleneckSpec, 7> groups = {{
        {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
        {6, 96, 3, 1}, {6, 160, 3, 1}, {6, 320, 1, 1},
    }};
    return groups;
}

inline constexpr int kHeadChannels = 256;

// Resolves a CM0..CM8 / CMSNet-M0..M8 name to its (OS, pyramid, shortcut) triple.
inline ArrangementConfig arrangement_by_name(const std::string& name) {
    std::string key = name;
    if (key.rfind("CMSNet-M", 0) == 0) key = "CM" + key.substr(8);
    static const struct {
        const char* abbr;
        int os;
        Pyramid pyr;
        bool shortcut;
    } table[] = {
        {"CM0", 8, Pyramid::GPP, false},  {"CM1", 8, Pyramid::SPP, false},
        {"CM2", 8, Pyramid::ASPP, false}, {"CM3", 16, Pyramid::GPP, false},
        {"CM4", 16, Pyramid::SPP, false}, {"CM5", 16, Pyramid::ASPP, false},
        {"CM6", 16, Pyramid::GPP, true},  {"CM7", 16, Pyramid::SPP, true},
        {"CM8", 16, Pyramid::ASPP, true},
    };
    for (const auto& row : table)
        if (key == row.abbr) {
            ArrangementConfig cfg;
            cfg.name = row.abbr;
            cfg.output_stride = row.os;
            cfg.pyramid = row.pyr;
            cfg.shortcut = row.shortcut;
            return cfg;
        }
    throw config_error("unknown arrangement name: " + name);
}

// ---------------------------------------------------------------------------

class GraphBuilder {
public:
    explicit GraphBuilder(unsigned seed) : rng_(seed) {}

    Graph take() { return std::move(graph_); }
    Dims4 shape(int id) const { return shapes_[id]; }

    int input(Dims4 dims) {
        Node nd;
        nd.kind = OpKind::Input;
        return push(nd, dims);
    }

    int conv(int in_id, int kh, int kw, int stride, int dilation, int groups,
             int cout, const std::string& name, bool with_bias,
             bool zero_init_bias = true) {
        Dims4 in = shapes_[in_id];
        Node nd;
        nd.kind = OpKind::Conv;
        nd.inputs = {in_id};
        nd.conv = {kh, kw, stride, dilation, groups, cout};
        nd.conv.validate(in.c);
        nd.weight_name = name + ".weight";
        int cin_g = in.c / groups;
        Tensor w(kh, kw, cin_g, cout);
        float stddev = std::sqrt(2.0f / static_cast<float>(kh * kw * cin_g));
        w.fill_random(rng_, stddev);
        graph_.weights.emplace(nd.weight_name, std::move(w));
        if (with_bias) {
            nd.bias_name = name + ".bias";
            graph_.weights.emplace(nd.bias_name, Tensor(1, 1, 1, cout, 0.0f));
            (void)zero_init_bias;
        }
        return push(nd, {in.n, ceil_div(in.h, stride), ceil_div(in.w, stride), cout});
    }

    int batch_norm(int in_id, const std::string& prefix, float eps = 1e-3f) {
        Dims4 in = shapes_[in_id];
        Node nd;
        nd.kind = OpKind::BatchNorm;
        nd.inputs = {in_id};
        nd.bn_prefix = prefix;
        nd.bn_eps = eps;
        graph_.weights.emplace(prefix + ".gamma", Tensor(1, 1, 1, in.c, 1.0f));
        graph_.weights.emplace(prefix + ".beta", Tensor(1, 1, 1, in.c, 0.0f));
        graph_.weights.emplace(prefix + ".mean", Tensor(1, 1, 1, in.c, 0.0f));
        graph_.weights.emplace(prefix + ".var", Tensor(1, 1, 1, in.c, 1.0f));
        return push(nd, in);
    }

    int relu6(int in_id) {
        Node nd;
        nd.kind = OpKind::Relu6;
        nd.inputs = {in_id};
        return push(nd, shapes_[in_id]);
    }

    int avg_pool_to(int in_id, int out_h, int out_w) {
        Dims4 in = shapes_[in_id];
        Node nd;
        nd.kind = OpKind::AvgPool;
        nd.inputs = {in_id};
        nd.target_h = out_h;
        nd.target_w = out_w;
        return push(nd, {in.n, out_h, out_w, in.c});
    }

    int resize(int in_id, int out_h, int out_w) {
        Dims4 in = shapes_[in_id];
        Node nd;
        nd.kind = OpKind::Resize;
        nd.inputs = {in_id};
        nd.target_h = out_h;
        nd.target_w = out_w;
        return push(nd, {in.n, out_h, out_w, in.c});
    }

    int concat(const std::vector<int>& ids) {
        Dims4 first = shapes_[ids.at(0)];
        int total_c = 0;
        for (int id : ids) total_c += shapes_[id].c;
        Node nd;
        nd.kind = OpKind::Concat;
        nd.inputs = ids;
        return push(nd, {first.n, first.h, first.w, total_c});
    }

    int add(int a, int b) {
        Node nd;
        nd.kind = OpKind::Add;
        nd.inputs = {a, b};
        return push(nd, shapes_[a]);
    }

    // conv -> BN -> relu6 convenience
    int cbr(int in_id, int kh, int kw, int stride, int dilation, int groups,
            int cout, const std::string& name) {
        int c = conv(in_id, kh, kw, stride, dilation, groups, cout, name, false);
        int b = batch_norm(c, name + ".bn");
        return relu6(b);
    }

    void set_output(int id) { graph_.outputs = {id}; }

private:
    int push(Node nd, Dims4 out) {
        int id = graph_.add_node(std::move(nd));
        shapes_.push_back(out);
        return id;
    }

    Graph graph_;
    std::vector<Dims4> shapes_;
    std::mt19937 rng_;
};

// ---------------------------------------------------------------------------
// Backbone

struct BackboneOut {
    int feature_id;   // final backbone feature (320 channels)
    int shortcut_id;  // stride-4 tap (24 channels)
};

inline BackboneOut build_backbone(GraphBuilder& b, int input_id,
                                  const ArrangementConfig& cfg) {
    if (cfg.backbone != Backbone::MobileNetV2)
        throw config_error("unsupported backbone");

    int cur = b.cbr(input_id, 3, 3, 2, 1, 1, 32, "backbone.conv1");
    int tap = -1;
    int block = 0;
    int dilation = 1;
    int stride_budget = cfg.output_stride / 2;  // strides left after conv1

    for (const BottleneckSpec& grp : mobilenetv2_groups()) {
        for (int rep = 0; rep < grp.repeats; ++rep) {
            int stride = (rep == 0) ? grp.stride : 1;
            int block_dilation = dilation;
            if (stride == 2) {
                if (stride_budget > 1) {
                    stride_budget /= 2;
                } else {
                    // stride converted to dilation beyond the output-stride limit
                    stride = 1;
                    dilation *= 2;
                }
            }
            std::string base = "backbone.block" + std::to_string(block++);
            Dims4 in_shape = b.shape(cur);
            int cin = in_shape.c;
            int id = cur;
            int expanded = cin * grp.expansion;
            if (grp.expansion != 1)
                id = b.cbr(id, 1, 1, 1, 1, 1, expanded, base + ".expand");
            id = b.cbr(id, 3, 3, stride, block_dilation, expanded, expanded,
                       base + ".dw");
            int proj = b.conv(id, 1, 1, 1, 1, 1, grp.out_channels,
                              base + ".project", false);
            id = b.batch_norm(proj, base + ".project.bn");
            if (stride == 1 && cin == grp.out_channels) id = b.add(id, cur);
            cur = id;
        }
        if (grp.out_channels == 24) tap = cur;
    }
    return {cur, tap};
}

// ---------------------------------------------------------------------------
// Pyramid heads

inline int build_pyramid(GraphBuilder& b, int feature_id,
                         const ArrangementConfig& cfg) {
    Dims4 f = b.shape(feature_id);
    switch (cfg.pyramid) {
        case Pyramid::GPP: {
            int a = b.cbr(feature_id, 1, 1, 1, 1, 1, kHeadChannels, "head.gpp.point");
            int g = b.avg_pool_to(feature_id, 1, 1);
            g = b.cbr(g, 1, 1, 1, 1, 1, kHeadChannels, "head.gpp.global");
            g = b.resize(g, f.h, f.w);
            int cat = b.concat({a, g});
            return b.cbr(cat, 1, 1, 1, 1, 1, kHeadChannels, "head.gpp.project");
        }
        case Pyramid::SPP: {
            // pool grid at full, 1/2, 1/3, 1/6 of the feature resolution
            const int divs[4] = {0, 2, 3, 6};
            int branch_c = f.c / 4;
            std::vector<int> parts = {feature_id};
            for (int i = 0; i < 4; ++i) {
                int th = divs[i] == 0 ? 1 : std::max(1, f.h / divs[i]);
                int tw = divs[i] == 0 ? 1 : std::max(1, f.w / divs[i]);
                int p = b.avg_pool_to(feature_id, th, tw);
                p = b.cbr(p, 1, 1, 1, 1, 1, branch_c,
                          "head.spp.branch" + std::to_string(i));
                p = b.resize(p, f.h, f.w);
                parts.push_back(p);
            }
            int cat = b.concat(parts);
            // factored 3x3 projection: depthwise then pointwise
            Dims4 cs = b.shape(cat);
            int dw = b.cbr(cat, 3, 3, 1, 1, cs.c, cs.c, "head.spp.proj_dw");
            return b.cbr(dw, 1, 1, 1, 1, 1, kHeadChannels, "head.spp.proj_pw");
        }
        case Pyramid::ASPP: {
            const std::array<int, 4> rates = cfg.output_stride == 16
                                                 ? std::array<int, 4>{1, 6, 12, 18}
                                                 : std::array<int, 4>{1, 12, 24, 36};
            std::vector<int> parts;
            for (int i = 0; i < 4; ++i) {
                std::string base = "head.aspp.branch" + std::to_string(i);
                int p = rates[i] == 1
                            ? b.cbr(feature_id, 1, 1, 1, 1, 1, kHeadChannels, base)
                            : b.cbr(feature_id, 3, 3, 1, rates[i], 1, kHeadChannels,
                                    base);
                parts.push_back(p);
            }
            int cat = b.concat(parts);
            return b.cbr(cat, 1, 1, 1, 1, 1, kHeadChannels, "head.aspp.project");
        }
    }
    throw internal_error("unreachable pyramid kind");
}

// ---------------------------------------------------------------------------
// Decoder

inline int build_decoder(GraphBuilder& b, int head_id, int shortcut_id,
                         const ArrangementConfig& cfg) {
    int logits = b.conv(head_id, 1, 1, 1, 1, 1, cfg.num_classes,
                        "decoder.classifier", true);
    if (cfg.shortcut) {
        Dims4 tap = b.shape(shortcut_id);
        int up = b.resize(logits, tap.h, tap.w);
        int proj = b.conv(shortcut_id, 1, 1, 1, 1, 1, cfg.num_classes,
                          "decoder.shortcut", true);
        logits = b.add(up, proj);
    }
    return b.resize(logits, cfg.input_h, cfg.input_w);
}

// ---------------------------------------------------------------------------

inline Graph build_arrangement(const ArrangementConfig& cfg, unsigned seed = 42) {
    cfg.validate();
    GraphBuilder b(seed);
    int in = b.input({1, cfg.input_h, cfg.input_w, cfg.input_c});
    BackboneOut bb = build_backbone(b, in, cfg);
    int head = build_pyramid(b, bb.feature_id, cfg);
    int out = build_decoder(b, head, bb.shortcut_id, cfg);
    b.set_output(out);
    Graph g = b.take();
    g.input_dims = {1, cfg.input_h, cfg.input_w, cfg.input_c};
    return g;
}

inline Graph build_arrangement(const std::string& name, int num_classes,
                               int input_h, int input_w, int input_c = 3,
                               unsigned seed = 42) {
    ArrangementConfig cfg = arrangement_by_name(name);
    cfg.num_classes = num_classes;
    cfg.input_h = input_h;
    cfg.input_w = input_w;
    cfg.input_c = input_c;
    return build_arrangement(cfg, seed);
}

// ---------------------------------------------------------------------------
// Flat JSON config

inline nlohmann::json config_to_json(const ArrangementConfig& cfg) {
    return nlohmann::json{
        {"name", cfg.name},
        {"backbone", "mobilenetv2"},
        {"output_stride", cfg.output_stride},
        {"pyramid", pyramid_name(cfg.pyramid)},
        {"shortcut", cfg.shortcut},
        {"num_classes", cfg.num_classes},
        {"input_h", cfg.input_h},
        {"input_w", cfg.input_w},
        {"input_c", cfg.input_c},
    };
}

inline ArrangementConfig config_from_json(const nlohmann::json& j) {
    ArrangementConfig cfg;
    try {
        cfg.name = j.at("name").get<std::string>();
        std::string bb = j.at("backbone").get<std::string>();
        if (bb != "mobilenetv2")
            throw config_error("unsupported backbone: " + bb);
        cfg.output_stride = j.at("output_stride").get<int>();
        std::string pyr = j.at("pyramid").get<std::string>();
        if (pyr == "GPP") cfg.pyramid = Pyramid::GPP;
        else if (pyr == "SPP") cfg.pyramid = Pyramid::SPP;
        else if (pyr == "ASPP") cfg.pyramid = Pyramid::ASPP;
        else throw config_error("unknown pyramid kind: " + pyr);
        cfg.shortcut = j.at("shortcut").get<bool>();
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.input_h = j.at("input_h").get<int>();
        cfg.input_w = j.at("input_w").get<int>();
        cfg.input_c = j.at("input_c").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("bad arrangement config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace cmsnet
