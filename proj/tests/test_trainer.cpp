#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "cmsnet/builder.hpp"
#include "cmsnet/dataset.hpp"
#include "cmsnet/trainer.hpp"
#include "helpers.hpp"

using namespace cmsnet;

namespace {

std::vector<TrainSample> tiny_dataset(int count, int h, int w, int n_classes) {
    std::vector<TrainSample> ds;
    for (int i = 0; i < count; ++i) {
        SyntheticScene scene = generate_synthetic_scene(100 + i, h, w, n_classes);
        ds.push_back({scene.image, scene.mask});
    }
    return ds;
}

}  // namespace

TEST_CASE("learning rate decays linearly to zero") {
    REQUIRE(poly_lr(0, 100, 0.007f) == 0.007f);
    REQUIRE(poly_lr(100, 100, 0.007f) == 0.0f);
    REQUIRE_THAT(poly_lr(50, 100, 0.007f),
                 Catch::Matchers::WithinAbs(0.0035, 1e-7));
    REQUIRE_THAT(poly_lr(25, 100, 0.007f),
                 Catch::Matchers::WithinAbs(0.00525, 1e-7));
    REQUIRE_THROWS_AS(poly_lr(0, 0, 0.007f), config_error);
    REQUIRE_THROWS_AS(poly_lr(-1, 100, 0.007f), config_error);
    REQUIRE_THROWS_AS(poly_lr(101, 100, 0.007f), config_error);
}

TEST_CASE("sgd with momentum matches the hand-computed recurrence") {
    std::map<std::string, Tensor> w, g, v;
    w.emplace("p", Tensor(1, 1, 1, 2));
    w.at("p").data = {1.0f, -2.0f};
    g.emplace("p", Tensor(1, 1, 1, 2));
    g.at("p").data = {0.5f, 1.0f};

    // step 1: v = g, w -= lr*v
    sgd_step(w, g, 0.1f, 0.9f, v);
    REQUIRE_THAT(w.at("p").data[0], Catch::Matchers::WithinAbs(0.95, 1e-6));
    REQUIRE_THAT(w.at("p").data[1], Catch::Matchers::WithinAbs(-2.1, 1e-6));

    // step 2: v = 0.9*g + g = 1.9g
    sgd_step(w, g, 0.1f, 0.9f, v);
    REQUIRE_THAT(w.at("p").data[0],
                 Catch::Matchers::WithinAbs(0.95 - 0.1 * 0.95, 1e-6));
    REQUIRE_THAT(w.at("p").data[1],
                 Catch::Matchers::WithinAbs(-2.1 - 0.1 * 1.9, 1e-6));
}

TEST_CASE("train validates its inputs") {
    Graph g = build_arrangement("CM3", 2, 32, 48);
    TrainConfig cfg;
    cfg.epochs = 1;

    REQUIRE_THROWS_AS(train(g, {}, cfg), config_error);

    auto bad_dims = tiny_dataset(1, 16, 16, 2);
    REQUIRE_THROWS_AS(train(g, bad_dims, cfg), config_error);

    auto bad_ids = tiny_dataset(1, 32, 48, 2);
    bad_ids[0].mask.at(0, 0) = 7;  // graph only has 2 classes
    REQUIRE_THROWS_AS(train(g, bad_ids, cfg), data_error);

    TrainConfig bad_lr = cfg;
    bad_lr.base_lr = 0.0f;
    auto ds = tiny_dataset(1, 32, 48, 2);
    REQUIRE_THROWS_AS(train(g, ds, bad_lr), config_error);
}

TEST_CASE("a short training run produces a consistent log") {
    Graph g = build_arrangement("CM3", 2, 32, 48);
    auto ds = tiny_dataset(4, 32, 48, 2);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.max_iterations = 6;
    cfg.batch_size = 4;
    cfg.miou_every = 0;  // final evaluation only

    TrainResult r = train(g, ds, cfg);
    REQUIRE(r.log.size() == 6);
    for (std::size_t i = 0; i < r.log.size(); ++i) {
        REQUIRE(r.log[i].iter == static_cast<long>(i + 1));
        REQUIRE(std::isfinite(r.log[i].loss));
        // lr follows the linear schedule over the capped horizon
        REQUIRE_THAT(r.log[i].lr,
                     Catch::Matchers::WithinAbs(
                         0.007 * (1.0 - static_cast<double>(i) / 6.0), 1e-6));
    }
    REQUIRE(r.final_miou >= 0.0);
    REQUIRE(r.final_miou <= 1.0);

    std::stringstream ss;
    save_train_log(r.log, ss);
    std::string header;
    std::getline(ss, header);
    REQUIRE(header == "epoch,iter,lr,loss,miou");
    int rows = 0;
    for (std::string line; std::getline(ss, line);)
        if (!line.empty()) ++rows;
    REQUIRE(rows == 6);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto ds = tiny_dataset(4, 32, 48, 2);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.max_iterations = 4;
    cfg.miou_every = 0;

    Graph a = build_arrangement("CM3", 2, 32, 48);
    Graph b = build_arrangement("CM3", 2, 32, 48);
    TrainResult ra = train(a, ds, cfg);
    TrainResult rb = train(b, ds, cfg);
    REQUIRE(ra.final_loss == rb.final_loss);
    for (const auto& [name, t] : a.weights)
        REQUIRE(t.data == b.weights.at(name).data);
}

TEST_CASE("a few steps of training reduce the loss on a fixed batch") {
    Graph g = build_arrangement("CM3", 2, 32, 48);
    auto ds = tiny_dataset(4, 32, 48, 2);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.max_iterations = 12;
    cfg.miou_every = 0;
    TrainResult r = train(g, ds, cfg);
    float first = r.log.front().loss;
    float last = r.log.back().loss;
    REQUIRE(last < first);
}
