#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "cmsnet/graph.hpp"

namespace cmsnet {

struct LatencyStats {
    int iterations = 0;
    std::vector<double> times;  // seconds, per iteration
    double mean_latency = 0.0;
    double mean_fps = 0.0;
    double sd_pct = 0.0;  // SD of per-iteration latency as % of mean latency
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
    double whisker_lo = 0.0, whisker_hi = 0.0;  // 1.5*IQR fences, clamped to data
    std::vector<double> outliers;
};

// Type-7 quantile: linear interpolation between order statistics.
inline double quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw config_error("quantile of empty series");
    double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    std::size_t lo = static_cast<std::size_t>(std::floor(h));
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]);
}

inline LatencyStats boxplot_params(std::vector<double> times) {
    if (times.empty()) throw config_error("boxplot of empty series");
    LatencyStats s;
    s.iterations = static_cast<int>(times.size());
    s.times = times;
    std::sort(times.begin(), times.end());
    s.min = times.front();
    s.max = times.back();
    s.q1 = quantile(times, 0.25);
    s.median = quantile(times, 0.5);
    s.q3 = quantile(times, 0.75);
    double iqr = s.q3 - s.q1;
    double lo_fence = s.q1 - 1.5 * iqr, hi_fence = s.q3 + 1.5 * iqr;
    s.whisker_lo = s.max;
    s.whisker_hi = s.min;
    for (double t : times) {
        if (t < lo_fence || t > hi_fence) s.outliers.push_back(t);
        else {
            s.whisker_lo = std::min(s.whisker_lo, t);
            s.whisker_hi = std::max(s.whisker_hi, t);
        }
    }
    double sum = std::accumulate(times.begin(), times.end(), 0.0);
    s.mean_latency = sum / static_cast<double>(times.size());
    s.mean_fps = 1.0 / s.mean_latency;
    double var = 0.0;
    for (double t : times) var += (t - s.mean_latency) * (t - s.mean_latency);
    var /= static_cast<double>(times.size());
    s.sd_pct = std::sqrt(var) / s.mean_latency * 100.0;
    return s;
}

// Runs `workload` iterations times (after warmup) on a monotonic clock.
inline LatencyStats time_inference(const std::function<void()>& workload,
                                   int iterations = 500, int warmup = 20) {
    if (iterations < 1) throw config_error("time_inference: iterations must be >= 1");
    for (int i = 0; i < warmup; ++i) workload();
    std::vector<double> times;
    times.reserve(iterations);
    for (int i = 0; i < iterations; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        workload();
        auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return boxplot_params(std::move(times));
}

// Deterministic graph workload: one fixed random input, reused.
inline LatencyStats time_inference(Graph& g, int batch, int iterations = 500,
                                   int warmup = 20, unsigned seed = 42) {
    Tensor input(batch, g.input_dims.h, g.input_dims.w, g.input_dims.c);
    std::mt19937 rng(seed);
    input.fill_random(rng, 1.0f);
    return time_inference([&] { forward(g, input); }, iterations, warmup);
}

// Distance traveled between capture and the processed result, in meters.
inline double reaction_distance(double speed_kmh, double fps) {
    if (fps <= 0.0) throw config_error("reaction_distance: fps must be positive");
    if (speed_kmh < 0.0)
        throw config_error("reaction_distance: speed must be nonnegative");
    return speed_kmh / (3.6 * fps);
}

inline double reaction_latency_s(double fps) {
    if (fps <= 0.0) throw config_error("reaction_latency: fps must be positive");
    return 1.0 / fps;
}

}  // namespace cmsnet
