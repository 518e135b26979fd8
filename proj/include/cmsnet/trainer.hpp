#pragma once

#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include "cmsnet/graph.hpp"
#include "cmsnet/image.hpp"
#include "cmsnet/impairments.hpp"
#include "cmsnet/metrics.hpp"

namespace cmsnet {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 4;
    float base_lr = 0.007f;
    float momentum = 0.9f;
    unsigned seed = 42;
    bool augment = false;
    std::int32_t ignore_id = -1;
    long max_iterations = 0;  // 0 = epochs decide; otherwise hard cap
    int miou_every = 10;      // evaluate training mIoU every N epochs (0 = final only)

    void validate() const {
        if (base_lr <= 0.0f) throw config_error("base_lr must be positive");
        if (batch_size < 1) throw config_error("batch_size must be >= 1");
        if (epochs < 1) throw config_error("epochs must be >= 1");
    }
};

// Linear decay to exactly zero at max_iter.
inline float poly_lr(long iter, long max_iter, float base_lr) {
    if (max_iter <= 0) throw config_error("poly_lr: max_iter must be positive");
    if (iter < 0 || iter > max_iter)
        throw config_error("poly_lr: iter outside [0, max_iter]");
    return base_lr * (1.0f - static_cast<float>(iter) / static_cast<float>(max_iter));
}

// v <- momentum*v + g;  w <- w - lr*v
inline void sgd_step(std::map<std::string, Tensor>& weights,
                     const std::map<std::string, Tensor>& grads, float lr,
                     float momentum, std::map<std::string, Tensor>& velocity) {
    for (const auto& [name, g] : grads) {
        Tensor& w = weights.at(name);
        auto vit = velocity.find(name);
        if (vit == velocity.end())
            vit = velocity.emplace(name, Tensor(w.n, w.h, w.w, w.c)).first;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            v.data[i] = momentum * v.data[i] + g.data[i];
            w.data[i] -= lr * v.data[i];
        }
    }
}

struct TrainSample {
    Image image;
    Mask mask;
};

struct TrainLogRow {
    int epoch;
    long iter;
    float lr;
    float loss;
    double miou_value;  // most recent training mIoU (0 until first evaluation)
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    double final_miou = 0.0;
    float final_loss = 0.0f;
};

// CSV: epoch,iter,lr,loss,miou
inline void save_train_log(const std::vector<TrainLogRow>& log, std::ostream& os) {
    os << "epoch,iter,lr,loss,miou\n";
    for (const auto& row : log)
        os << row.epoch << "," << row.iter << "," << row.lr << "," << row.loss
           << "," << row.miou_value << "\n";
}

inline double training_miou(Graph& g, const std::vector<TrainSample>& dataset,
                            int num_classes, std::int32_t ignore_id) {
    ConfusionMatrix cm(num_classes);
    for (const TrainSample& s : dataset) {
        Tensor in = image_to_tensor(s.image);
        auto pred = predict(g, in);
        accumulate(cm, std::span<const std::int32_t>(s.mask.data),
                   std::span<const std::int32_t>(pred), ignore_id);
    }
    return miou(cm);
}

inline TrainResult train(Graph& g, const std::vector<TrainSample>& dataset,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw config_error("train: empty dataset");
    const int num_classes = infer_shapes(g, g.input_dims)[g.outputs[0]].c;
    const int ih = g.input_dims.h, iw = g.input_dims.w, ic = g.input_dims.c;
    for (const TrainSample& s : dataset) {
        if (s.image.h != ih || s.image.w != iw || s.image.c != ic)
            throw config_error("train: sample dims do not match graph input");
        for (std::int32_t v : s.mask.data)
            if (v != cfg.ignore_id && (v < 0 || v >= num_classes))
                throw data_error("train: mask class id out of range");
    }

    const long steps_per_epoch =
        ceil_div(static_cast<int>(dataset.size()), cfg.batch_size);
    long total_iters = steps_per_epoch * cfg.epochs;
    if (cfg.max_iterations > 0)
        total_iters = std::min(total_iters, cfg.max_iterations);

    std::mt19937 rng(cfg.seed);
    std::map<std::string, Tensor> velocity;
    TrainResult result;
    long iter = 0;
    int epoch = 0;
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    double last_miou = 0.0;
    float last_loss = 0.0f;

    while (iter < total_iters) {
        ++epoch;
        std::shuffle(order.begin(), order.end(), rng);
        for (long step = 0; step < steps_per_epoch && iter < total_iters; ++step) {
            // sequential shard of the shuffled order
            std::vector<std::size_t> batch_idx;
            for (int k = 0; k < cfg.batch_size; ++k)
                batch_idx.push_back(
                    order[(step * cfg.batch_size + k) % order.size()]);

            const int B = static_cast<int>(batch_idx.size());
            Tensor input(B, ih, iw, ic);
            std::vector<std::int32_t> target(
                static_cast<std::size_t>(B) * ih * iw);
            for (int b = 0; b < B; ++b) {
                Image img = dataset[batch_idx[b]].image;
                Mask msk = dataset[batch_idx[b]].mask;
                if (cfg.augment) augment(img, msk, rng());
                for (int y = 0; y < ih; ++y)
                    for (int x = 0; x < iw; ++x) {
                        for (int c = 0; c < ic; ++c)
                            input.at(b, y, x, c) =
                                static_cast<float>(img.at(y, x, c)) / 255.0f;
                        target[(static_cast<std::size_t>(b) * ih + y) * iw + x] =
                            msk.at(y, x);
                    }
            }

            Execution ex;
            ex.training = true;
            execute(g, input, ex);
            const Tensor& logits = ex.values[g.outputs[0]];
            CrossEntropyResult ce = softmax_cross_entropy(
                logits, std::span<const std::int32_t>(target), cfg.ignore_id);
            if (!std::isfinite(ce.loss))
                throw numeric_error("train: non-finite loss at iteration " +
                                    std::to_string(iter));

            std::map<std::string, Tensor> grads;
            backward(g, ex, ce.grad_logits, grads);
            float lr = poly_lr(iter, total_iters, cfg.base_lr);
            sgd_step(g.weights, grads, lr, cfg.momentum, velocity);
            for (const auto& [name, w] : g.weights)
                if (!w.all_finite())
                    throw numeric_error("train: non-finite weight " + name);

            ++iter;
            last_loss = ce.loss;
            result.log.push_back({epoch, iter, lr, ce.loss, last_miou});
        }
        bool last_epoch = iter >= total_iters;
        if (last_epoch || (cfg.miou_every > 0 && epoch % cfg.miou_every == 0)) {
            last_miou = training_miou(g, dataset, num_classes, cfg.ignore_id);
            if (!result.log.empty()) result.log.back().miou_value = last_miou;
        }
    }
    result.final_miou = last_miou;
    result.final_loss = last_loss;
    return result;
}

}  // namespace cmsnet
