#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <vector>

#include "cmsnet/common.hpp"

namespace cmsnet {

// Dense rank-4 tensor, layout (n, h, w, c) row-major, 32-bit floats.
// An optional gradient buffer of identical length can be attached.
struct Tensor {
    int n = 0, h = 0, w = 0, c = 0;
    std::vector<float> data;
    std::vector<float> grad;  // empty or data.size()

    Tensor() = default;
    Tensor(int n_, int h_, int w_, int c_, float fill = 0.0f)
        : n(n_), h(h_), w(w_), c(c_) {
        if (n < 0 || h < 0 || w < 0 || c < 0)
            throw config_error("tensor dims must be nonnegative");
        data.assign(size(), fill);
    }

    std::size_t size() const {
        return static_cast<std::size_t>(n) * h * w * c;
    }
    std::array<int, 4> dims() const { return {n, h, w, c}; }
    bool same_dims(const Tensor& o) const {
        return n == o.n && h == o.h && w == o.w && c == o.c;
    }

    std::size_t index(int in, int ih, int iw, int ic) const {
        return ((static_cast<std::size_t>(in) * h + ih) * w + iw) * c + ic;
    }
    float& at(int in, int ih, int iw, int ic) { return data[index(in, ih, iw, ic)]; }
    float at(int in, int ih, int iw, int ic) const { return data[index(in, ih, iw, ic)]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
    }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill_random(std::mt19937& rng, float stddev) {
        std::normal_distribution<float> dist(0.0f, stddev);
        for (auto& v : data) v = dist(rng);
    }
};

// Fixture dump format: magic "CMST", u32 version=1, 4 x u32 dims,
// then n*h*w*c little-endian IEEE-754 floats.
inline void save_tensor(const Tensor& t, std::ostream& os) {
    os.write("CMST", 4);
    std::uint32_t version = 1;
    os.write(reinterpret_cast<const char*>(&version), 4);
    std::uint32_t d[4] = {static_cast<std::uint32_t>(t.n), static_cast<std::uint32_t>(t.h),
                          static_cast<std::uint32_t>(t.w), static_cast<std::uint32_t>(t.c)};
    os.write(reinterpret_cast<const char*>(d), 16);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

inline void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open for writing: " + path);
    save_tensor(t, os);
}

inline Tensor load_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CMST", 4) != 0)
        throw data_error("bad tensor magic (expected CMST)");
    std::uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw data_error("unsupported tensor version");
    std::uint32_t d[4];
    is.read(reinterpret_cast<char*>(d), 16);
    Tensor t(static_cast<int>(d[0]), static_cast<int>(d[1]),
             static_cast<int>(d[2]), static_cast<int>(d[3]));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw data_error("truncated tensor file");
    return t;
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open tensor file: " + path);
    return load_tensor(is);
}

}  // namespace cmsnet
