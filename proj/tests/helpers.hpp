#pragma once

#include <random>

#include "cmsnet/tensor.hpp"
#include "oracles.hpp"

namespace testutil {

inline oracle::Array4 to_array(const cmsnet::Tensor& t) {
    oracle::Array4 a(t.n, t.h, t.w, t.c);
    for (std::size_t i = 0; i < t.data.size(); ++i)
        a.data[i] = static_cast<double>(t.data[i]);
    return a;
}

inline cmsnet::Tensor from_array(const oracle::Array4& a) {
    cmsnet::Tensor t(a.n, a.h, a.w, a.c);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        t.data[i] = static_cast<float>(a.data[i]);
    return t;
}

inline cmsnet::Tensor random_tensor(int n, int h, int w, int c, std::mt19937& rng,
                                    float stddev = 1.0f) {
    cmsnet::Tensor t(n, h, w, c);
    std::normal_distribution<float> dist(0.0f, stddev);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

inline double max_abs_diff(const cmsnet::Tensor& t, const oracle::Array4& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(t.data[i]) - a.data[i]));
    return m;
}

inline double max_abs_diff(const cmsnet::Tensor& a, const cmsnet::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) -
                                 static_cast<double>(b.data[i])));
    return m;
}

}  // namespace testutil
