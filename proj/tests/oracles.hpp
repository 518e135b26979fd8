// Test-only reference implementations, independent of the library kernels.
// Everything here is naive double-precision loops; the production headers are
// never called from this file.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

struct Array4 {
    int n = 0, h = 0, w = 0, c = 0;
    std::vector<double> data;

    Array4() = default;
    Array4(int n_, int h_, int w_, int c_)
        : n(n_), h(h_), w(w_), c(c_),
          data(static_cast<std::size_t>(n_) * h_ * w_ * c_, 0.0) {}

    double& at(int in, int ih, int iw, int ic) {
        return data[((static_cast<std::size_t>(in) * h + ih) * w + iw) * c + ic];
    }
    double at(int in, int ih, int iw, int ic) const {
        return data[((static_cast<std::size_t>(in) * h + ih) * w + iw) * c + ic];
    }
};

inline int cdiv(int a, int b) { return (a + b - 1) / b; }

struct ConvParams {
    int kh, kw, stride, dilation, groups, cout;
};

inline Array4 conv2d(const Array4& x, const Array4& w,
                     const std::vector<double>& bias, const ConvParams& p) {
    const int oh = cdiv(x.h, p.stride), ow = cdiv(x.w, p.stride);
    const int eff_kh = p.kh + (p.kh - 1) * (p.dilation - 1);
    const int eff_kw = p.kw + (p.kw - 1) * (p.dilation - 1);
    const int pad_top = std::max((oh - 1) * p.stride + eff_kh - x.h, 0) / 2;
    const int pad_left = std::max((ow - 1) * p.stride + eff_kw - x.w, 0) / 2;
    const int cin_g = x.c / p.groups, cout_g = p.cout / p.groups;
    Array4 out(x.n, oh, ow, p.cout);
    for (int n = 0; n < x.n; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int co = 0; co < p.cout; ++co) {
                    double acc = bias.empty() ? 0.0 : bias[co];
                    int g = co / cout_g;
                    for (int ky = 0; ky < p.kh; ++ky)
                        for (int kx = 0; kx < p.kw; ++kx) {
                            int iy = oy * p.stride - pad_top + ky * p.dilation;
                            int ix = ox * p.stride - pad_left + kx * p.dilation;
                            if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w)
                                continue;
                            for (int ci = 0; ci < cin_g; ++ci)
                                acc += x.at(n, iy, ix, g * cin_g + ci) *
                                       w.at(ky, kx, ci, co);
                        }
                    out.at(n, oy, ox, co) = acc;
                }
    return out;
}

inline Array4 batch_norm_train(const Array4& x, const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps) {
    const std::size_t pixels = static_cast<std::size_t>(x.n) * x.h * x.w;
    Array4 out(x.n, x.h, x.w, x.c);
    for (int c = 0; c < x.c; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) mean += x.data[p * x.c + c];
        mean /= static_cast<double>(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
            double d = x.data[p * x.c + c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(pixels);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t p = 0; p < pixels; ++p)
            out.data[p * x.c + c] =
                gamma[c] * (x.data[p * x.c + c] - mean) * inv + beta[c];
    }
    return out;
}

inline Array4 relu6(const Array4& x) {
    Array4 out = x;
    for (auto& v : out.data) v = std::min(std::max(v, 0.0), 6.0);
    return out;
}

// brute-force window scan, SAME placement, valid cells only
inline Array4 avg_pool(const Array4& x, int wh, int ww, int stride) {
    const int oh = cdiv(x.h, stride), ow = cdiv(x.w, stride);
    const int pad_top = std::max((oh - 1) * stride + wh - x.h, 0) / 2;
    const int pad_left = std::max((ow - 1) * stride + ww - x.w, 0) / 2;
    Array4 out(x.n, oh, ow, x.c);
    for (int n = 0; n < x.n; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int c = 0; c < x.c; ++c) {
                    double acc = 0.0;
                    int cnt = 0;
                    for (int ky = 0; ky < wh; ++ky)
                        for (int kx = 0; kx < ww; ++kx) {
                            int iy = oy * stride - pad_top + ky;
                            int ix = ox * stride - pad_left + kx;
                            if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w)
                                continue;
                            acc += x.at(n, iy, ix, c);
                            ++cnt;
                        }
                    out.at(n, oy, ox, c) = acc / cnt;
                }
    return out;
}

inline Array4 adaptive_avg_pool(const Array4& x, int oh, int ow) {
    Array4 out(x.n, oh, ow, x.c);
    for (int n = 0; n < x.n; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int c = 0; c < x.c; ++c) {
                    int y0 = oy * x.h / oh, y1 = cdiv((oy + 1) * x.h, oh);
                    int x0 = ox * x.w / ow, x1 = cdiv((ox + 1) * x.w, ow);
                    double acc = 0.0;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) acc += x.at(n, iy, ix, c);
                    out.at(n, oy, ox, c) = acc / ((y1 - y0) * (x1 - x0));
                }
    return out;
}

// independently coded half-pixel-center scalar sampler
inline double bilinear_sample(const Array4& x, int n, double sy, double sx, int c) {
    sy = std::min(std::max(sy, 0.0), static_cast<double>(x.h - 1));
    sx = std::min(std::max(sx, 0.0), static_cast<double>(x.w - 1));
    int y0 = static_cast<int>(std::floor(sy));
    int x0 = static_cast<int>(std::floor(sx));
    int y1 = std::min(y0 + 1, x.h - 1), x1 = std::min(x0 + 1, x.w - 1);
    double ty = sy - y0, tx = sx - x0;
    return x.at(n, y0, x0, c) * (1 - ty) * (1 - tx) +
           x.at(n, y0, x1, c) * (1 - ty) * tx +
           x.at(n, y1, x0, c) * ty * (1 - tx) + x.at(n, y1, x1, c) * ty * tx;
}

inline Array4 bilinear_resize(const Array4& x, int oh, int ow) {
    Array4 out(x.n, oh, ow, x.c);
    for (int n = 0; n < x.n; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int c = 0; c < x.c; ++c) {
                    double sy = (oy + 0.5) * x.h / oh - 0.5;
                    double sx = (ox + 0.5) * x.w / ow - 0.5;
                    out.at(n, oy, ox, c) = bilinear_sample(x, n, sy, sx, c);
                }
    return out;
}

inline double softmax_ce(const Array4& logits,
                         const std::vector<std::int32_t>& target,
                         std::int32_t ignore_id) {
    const int C = logits.c;
    const std::size_t pixels =
        static_cast<std::size_t>(logits.n) * logits.h * logits.w;
    double loss = 0.0;
    std::size_t valid = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
        if (target[p] == ignore_id) continue;
        const double* row = logits.data.data() + p * C;
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
        loss += -(row[target[p]] - mx - std::log(denom));
        ++valid;
    }
    return valid ? loss / static_cast<double>(valid) : 0.0;
}

// ---------------------------------------------------------------------------
// Central finite differences of a scalar double-precision functional.

struct FdCheck {
    double max_rel_err = 0.0;
};

// loss: maps a flat parameter vector to a scalar (double precision).
// analytic: the implementation's gradient for those parameters.
inline FdCheck finite_difference(const std::function<double(const std::vector<double>&)>& loss,
                                 std::vector<double> params,
                                 const std::vector<float>& analytic,
                                 double step = 1e-3) {
    double gmax = 1e-6;
    for (float g : analytic) gmax = std::max(gmax, std::abs(static_cast<double>(g)));
    FdCheck r;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double orig = params[i];
        params[i] = orig + step;
        double lp = loss(params);
        params[i] = orig - step;
        double lm = loss(params);
        params[i] = orig;
        double fd = (lp - lm) / (2.0 * step);
        double err = std::abs(fd - static_cast<double>(analytic[i])) / gmax;
        r.max_rel_err = std::max(r.max_rel_err, err);
    }
    return r;
}

}  // namespace oracle
