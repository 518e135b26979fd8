#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cmsnet/tensor.hpp"

namespace cmsnet {

// Convolution descriptor. Padding is always SAME: out = ceil(in / stride).
// groups == in_channels selects the depthwise path.
struct ConvSpec {
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int dilation = 1;
    int groups = 1;
    int out_channels = 1;

    void validate(int in_channels) const {
        if (kernel_h < 1 || kernel_w < 1 || stride < 1 || dilation < 1 ||
            groups < 1 || out_channels < 1)
            throw config_error("conv spec fields must be positive");
        if (stride > 1 && dilation > 1)
            throw config_error("stride > 1 requires dilation == 1");
        if (in_channels % groups != 0)
            throw config_error("in_channels not divisible by groups");
        if (out_channels % groups != 0)
            throw config_error("out_channels not divisible by groups");
    }

    int effective_kh() const { return kernel_h + (kernel_h - 1) * (dilation - 1); }
    int effective_kw() const { return kernel_w + (kernel_w - 1) * (dilation - 1); }
};

namespace detail {

inline void same_padding(int in, int out, int stride, int eff_k, int& pad_beg) {
    int total = std::max((out - 1) * stride + eff_k - in, 0);
    pad_beg = total / 2;
}

// Row-major matmul accumulate: C(m x p) += A(m x k) * B(k x p).
// Accumulates in double so the result does not depend on the float rounding
// of intermediate partial sums; folded and unfolded graphs then agree to the
// rounding of the weights alone.
inline void matmul_acc(const float* a, const float* b, float* c,
                       int m, int k, int p) {
    std::vector<double> acc(p);
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * p;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int j = 0; j < k; ++j) {
            float av = arow[j];
            if (av == 0.0f) continue;
            const float* brow = b + static_cast<std::size_t>(j) * p;
            for (int l = 0; l < p; ++l)
                acc[l] += static_cast<double>(av) * brow[l];
        }
        for (int l = 0; l < p; ++l)
            crow[l] += static_cast<float>(acc[l]);
    }
}

}  // namespace detail

// weights layout: (kh, kw, cin/groups, cout); bias length cout (may be empty).
// post_scale, when present, multiplies each output channel after the
// accumulator is rounded and before bias/clamp; this is where a folded batch
// norm lives, and the double arithmetic mirrors inference-mode batch_norm so
// folding preserves outputs to the rounding of the scale itself.
inline Tensor conv2d(const Tensor& input, const Tensor& weights,
                     std::span<const float> bias, const ConvSpec& spec,
                     bool clamp_relu6 = false,
                     std::span<const float> post_scale = {}) {
    const int cin = input.c;
    spec.validate(cin);
    if (input.h == 0 || input.w == 0)
        throw config_error("conv2d: zero-sized spatial dims");
    if (weights.n != spec.kernel_h || weights.h != spec.kernel_w ||
        weights.w != cin / spec.groups || weights.c != spec.out_channels)
        throw config_error("conv2d: weight dims do not match spec");
    if (!bias.empty() && static_cast<int>(bias.size()) != spec.out_channels)
        throw config_error("conv2d: bias length mismatch");
    if (!post_scale.empty() &&
        static_cast<int>(post_scale.size()) != spec.out_channels)
        throw config_error("conv2d: post_scale length mismatch");

    const int oh = ceil_div(input.h, spec.stride);
    const int ow = ceil_div(input.w, spec.stride);
    const int cout = spec.out_channels;
    const int cin_g = cin / spec.groups;
    const int cout_g = cout / spec.groups;
    int pad_top, pad_left;
    detail::same_padding(input.h, oh, spec.stride, spec.effective_kh(), pad_top);
    detail::same_padding(input.w, ow, spec.stride, spec.effective_kw(), pad_left);

    Tensor out(input.n, oh, ow, cout);

    if (spec.groups == 1) {
        // im2col + matmul; the weight layout flattens directly to (kh*kw*cin, cout).
        const int patch = spec.kernel_h * spec.kernel_w * cin;
        std::vector<float> col(static_cast<std::size_t>(oh) * ow * patch);
        for (int in_i = 0; in_i < input.n; ++in_i) {
            std::fill(col.begin(), col.end(), 0.0f);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    float* prow = col.data() +
                                  (static_cast<std::size_t>(oy) * ow + ox) * patch;
                    for (int ky = 0; ky < spec.kernel_h; ++ky) {
                        int iy = oy * spec.stride - pad_top + ky * spec.dilation;
                        if (iy < 0 || iy >= input.h) continue;
                        for (int kx = 0; kx < spec.kernel_w; ++kx) {
                            int ix = ox * spec.stride - pad_left + kx * spec.dilation;
                            if (ix < 0 || ix >= input.w) continue;
                            const float* src = &input.data[input.index(in_i, iy, ix, 0)];
                            float* dst = prow + (ky * spec.kernel_w + kx) * cin;
                            std::copy(src, src + cin, dst);
                        }
                    }
                }
            }
            float* obase = &out.data[out.index(in_i, 0, 0, 0)];
            detail::matmul_acc(col.data(), weights.data.data(), obase,
                               oh * ow, patch, cout);
        }
    } else {
        // Grouped / depthwise path: direct loops.
        for (int in_i = 0; in_i < input.n; ++in_i)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox)
                    for (int co = 0; co < cout; ++co) {
                        int g = co / cout_g;
                        double acc = 0.0;
                        for (int ky = 0; ky < spec.kernel_h; ++ky) {
                            int iy = oy * spec.stride - pad_top + ky * spec.dilation;
                            if (iy < 0 || iy >= input.h) continue;
                            for (int kx = 0; kx < spec.kernel_w; ++kx) {
                                int ix = ox * spec.stride - pad_left + kx * spec.dilation;
                                if (ix < 0 || ix >= input.w) continue;
                                for (int ci = 0; ci < cin_g; ++ci)
                                    acc += static_cast<double>(
                                               input.at(in_i, iy, ix, g * cin_g + ci)) *
                                           weights.at(ky, kx, ci, co);
                            }
                        }
                        out.at(in_i, oy, ox, co) = static_cast<float>(acc);
                    }
    }

    if (!bias.empty() || clamp_relu6 || !post_scale.empty()) {
        const std::size_t pixels = static_cast<std::size_t>(out.n) * oh * ow;
        for (std::size_t p = 0; p < pixels; ++p) {
            float* row = out.data.data() + p * cout;
            for (int co = 0; co < cout; ++co) {
                float v;
                if (post_scale.empty()) {
                    v = row[co] + (bias.empty() ? 0.0f : bias[co]);
                } else {
                    v = static_cast<float>(
                        static_cast<double>(row[co]) * post_scale[co] +
                        (bias.empty() ? 0.0 : static_cast<double>(bias[co])));
                }
                if (clamp_relu6) v = std::min(std::max(v, 0.0f), 6.0f);
                row[co] = v;
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor grad_input;
    Tensor grad_weights;
    std::vector<float> grad_bias;
};

inline ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                                 const Tensor& weights, const ConvSpec& spec) {
    const int cin = input.c;
    spec.validate(cin);
    const int oh = ceil_div(input.h, spec.stride);
    const int ow = ceil_div(input.w, spec.stride);
    if (grad_out.n != input.n || grad_out.h != oh || grad_out.w != ow ||
        grad_out.c != spec.out_channels)
        throw internal_error("conv2d_backward: grad_out shape mismatch");

    const int cout = spec.out_channels;
    const int cin_g = cin / spec.groups;
    const int cout_g = cout / spec.groups;
    int pad_top, pad_left;
    detail::same_padding(input.h, oh, spec.stride, spec.effective_kh(), pad_top);
    detail::same_padding(input.w, ow, spec.stride, spec.effective_kw(), pad_left);

    ConvGrads g;
    g.grad_input = Tensor(input.n, input.h, input.w, input.c);
    g.grad_weights = Tensor(weights.n, weights.h, weights.w, weights.c);
    g.grad_bias.assign(cout, 0.0f);

    for (int in_i = 0; in_i < input.n; ++in_i)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int co = 0; co < cout; ++co) {
                    float go = grad_out.at(in_i, oy, ox, co);
                    if (go == 0.0f) continue;
                    g.grad_bias[co] += go;
                    int grp = co / cout_g;
                    for (int ky = 0; ky < spec.kernel_h; ++ky) {
                        int iy = oy * spec.stride - pad_top + ky * spec.dilation;
                        if (iy < 0 || iy >= input.h) continue;
                        for (int kx = 0; kx < spec.kernel_w; ++kx) {
                            int ix = ox * spec.stride - pad_left + kx * spec.dilation;
                            if (ix < 0 || ix >= input.w) continue;
                            for (int ci = 0; ci < cin_g; ++ci) {
                                int ic = grp * cin_g + ci;
                                g.grad_weights.at(ky, kx, ci, co) +=
                                    go * input.at(in_i, iy, ix, ic);
                                g.grad_input.at(in_i, iy, ix, ic) +=
                                    go * weights.at(ky, kx, ci, co);
                            }
                        }
                    }
                }
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormParams {
    std::vector<float> gamma, beta, running_mean, running_var;
    float epsilon = 1e-3f;

    static BatchNormParams identity(int channels, float eps = 1e-3f) {
        BatchNormParams p;
        p.gamma.assign(channels, 1.0f);
        p.beta.assign(channels, 0.0f);
        p.running_mean.assign(channels, 0.0f);
        p.running_var.assign(channels, 1.0f);
        p.epsilon = eps;
        return p;
    }
    int channels() const { return static_cast<int>(gamma.size()); }
};

inline constexpr float kBatchNormMomentum = 0.9f;

// Saved batch statistics for the training-mode backward pass.
struct BNCache {
    std::vector<float> mean, inv_std;
};

inline Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool training,
                         BNCache* cache = nullptr) {
    if (p.channels() != x.c)
        throw config_error("batch_norm: channel mismatch");
    const int C = x.c;
    const std::size_t pixels = static_cast<std::size_t>(x.n) * x.h * x.w;
    std::vector<float> mean(C), var(C);
    if (training) {
        std::fill(mean.begin(), mean.end(), 0.0f);
        std::fill(var.begin(), var.end(), 0.0f);
        for (std::size_t pidx = 0; pidx < pixels; ++pidx) {
            const float* row = x.data.data() + pidx * C;
            for (int c = 0; c < C; ++c) mean[c] += row[c];
        }
        for (int c = 0; c < C; ++c) mean[c] /= static_cast<float>(pixels);
        for (std::size_t pidx = 0; pidx < pixels; ++pidx) {
            const float* row = x.data.data() + pidx * C;
            for (int c = 0; c < C; ++c) {
                float d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        for (int c = 0; c < C; ++c) var[c] /= static_cast<float>(pixels);
        for (int c = 0; c < C; ++c) {
            p.running_mean[c] = kBatchNormMomentum * p.running_mean[c] +
                                (1.0f - kBatchNormMomentum) * mean[c];
            p.running_var[c] = kBatchNormMomentum * p.running_var[c] +
                               (1.0f - kBatchNormMomentum) * var[c];
        }
    } else {
        mean = p.running_mean;
        var = p.running_var;
    }

    std::vector<float> inv_std(C);
    for (int c = 0; c < C; ++c)
        inv_std[c] = 1.0f / std::sqrt(var[c] + p.epsilon);
    if (cache) {
        cache->mean = mean;
        cache->inv_std = inv_std;
    }

    Tensor out(x.n, x.h, x.w, x.c);
    if (training) {
        for (std::size_t pidx = 0; pidx < pixels; ++pidx) {
            const float* row = x.data.data() + pidx * C;
            float* orow = out.data.data() + pidx * C;
            for (int c = 0; c < C; ++c)
                orow[c] = p.gamma[c] * (row[c] - mean[c]) * inv_std[c] + p.beta[c];
        }
    } else {
        // Inference collapses to y = x*scale + shift. Scale and shift are
        // quantized to float before use: these are exactly the values a
        // BN-folding pass stores on the conv, so a folded graph reproduces
        // this op bit for bit.
        std::vector<float> scale(C), shift(C);
        for (int c = 0; c < C; ++c) {
            double s = static_cast<double>(p.gamma[c]) /
                       std::sqrt(static_cast<double>(var[c]) + p.epsilon);
            scale[c] = static_cast<float>(s);
            shift[c] = static_cast<float>(static_cast<double>(p.beta[c]) -
                                          mean[c] * s);
        }
        for (std::size_t pidx = 0; pidx < pixels; ++pidx) {
            const float* row = x.data.data() + pidx * C;
            float* orow = out.data.data() + pidx * C;
            for (int c = 0; c < C; ++c)
                orow[c] = static_cast<float>(
                    static_cast<double>(row[c]) * scale[c] +
                    static_cast<double>(shift[c]));
        }
    }
    return out;
}

struct BNGrads {
    Tensor grad_input;
    std::vector<float> grad_gamma, grad_beta;
};

// Training-mode backward through the batch statistics.
inline BNGrads batch_norm_backward(const Tensor& grad_out, const Tensor& x,
                                   const BatchNormParams& p, const BNCache& cache) {
    const int C = x.c;
    const std::size_t pixels = static_cast<std::size_t>(x.n) * x.h * x.w;
    const float m = static_cast<float>(pixels);

    BNGrads g;
    g.grad_input = Tensor(x.n, x.h, x.w, x.c);
    g.grad_gamma.assign(C, 0.0f);
    g.grad_beta.assign(C, 0.0f);

    std::vector<float> sum_dy(C, 0.0f), sum_dy_xhat(C, 0.0f);
    for (std::size_t pidx = 0; pidx < pixels; ++pidx) {
        const float* xr = x.data.data() + pidx * C;
        const float* dy = grad_out.data.data() + pidx * C;
        for (int c = 0; c < C; ++c) {
            float xhat = (xr[c] - cache.mean[c]) * cache.inv_std[c];
            sum_dy[c] += dy[c];
            sum_dy_xhat[c] += dy[c] * xhat;
        }
    }
    g.grad_beta = sum_dy;
    g.grad_gamma = sum_dy_xhat;

    for (std::size_t pidx = 0; pidx < pixels; ++pidx) {
        const float* xr = x.data.data() + pidx * C;
        const float* dy = grad_out.data.data() + pidx * C;
        float* dx = g.grad_input.data.data() + pidx * C;
        for (int c = 0; c < C; ++c) {
            float xhat = (xr[c] - cache.mean[c]) * cache.inv_std[c];
            dx[c] = p.gamma[c] * cache.inv_std[c] *
                    (dy[c] - sum_dy[c] / m - xhat * sum_dy_xhat[c] / m);
        }
    }
    return g;
}

// Inference-mode gradient (running statistics treated as constants).
inline Tensor batch_norm_backward_inference(const Tensor& grad_out,
                                            const BatchNormParams& p) {
    const int C = static_cast<int>(p.gamma.size());
    Tensor dx(grad_out.n, grad_out.h, grad_out.w, grad_out.c);
    const std::size_t pixels =
        static_cast<std::size_t>(grad_out.n) * grad_out.h * grad_out.w;
    for (std::size_t pidx = 0; pidx < pixels; ++pidx) {
        const float* dy = grad_out.data.data() + pidx * C;
        float* d = dx.data.data() + pidx * C;
        for (int c = 0; c < C; ++c)
            d[c] = dy[c] * p.gamma[c] / std::sqrt(p.running_var[c] + p.epsilon);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Activations

inline Tensor relu6(const Tensor& x) {
    Tensor out = x;
    out.grad.clear();
    for (auto& v : out.data) v = std::min(std::max(v, 0.0f), 6.0f);
    return out;
}

inline Tensor relu6_backward(const Tensor& grad_out, const Tensor& saved_input) {
    Tensor dx(grad_out.n, grad_out.h, grad_out.w, grad_out.c);
    for (std::size_t i = 0; i < dx.data.size(); ++i) {
        float v = saved_input.data[i];
        dx.data[i] = (v > 0.0f && v < 6.0f) ? grad_out.data[i] : 0.0f;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Pooling

// SAME-style average pooling; ragged edge windows average valid cells only.
inline Tensor avg_pool(const Tensor& input, int window_h, int window_w, int stride) {
    if (window_h < 1 || window_w < 1 || stride < 1)
        throw config_error("avg_pool: window and stride must be positive");
    if (window_h > input.h || window_w > input.w)
        throw config_error("avg_pool: window exceeds spatial dims");
    const int oh = ceil_div(input.h, stride);
    const int ow = ceil_div(input.w, stride);
    int pad_top, pad_left;
    detail::same_padding(input.h, oh, stride, window_h, pad_top);
    detail::same_padding(input.w, ow, stride, window_w, pad_left);

    Tensor out(input.n, oh, ow, input.c);
    for (int in_i = 0; in_i < input.n; ++in_i)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int y0 = std::max(oy * stride - pad_top, 0);
                int y1 = std::min(oy * stride - pad_top + window_h, input.h);
                int x0 = std::max(ox * stride - pad_left, 0);
                int x1 = std::min(ox * stride - pad_left + window_w, input.w);
                float inv = 1.0f / static_cast<float>((y1 - y0) * (x1 - x0));
                for (int c = 0; c < input.c; ++c) {
                    float acc = 0.0f;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix)
                            acc += input.at(in_i, iy, ix, c);
                    out.at(in_i, oy, ox, c) = acc * inv;
                }
            }
    return out;
}

namespace detail {
inline void adaptive_range(int i, int in, int out, int& beg, int& end) {
    beg = (i * in) / out;
    end = ((i + 1) * in + out - 1) / out;
}
}  // namespace detail

// Adaptive average pooling to a target output size.
inline Tensor adaptive_avg_pool(const Tensor& input, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw config_error("adaptive_avg_pool: target dims must be positive");
    Tensor out(input.n, out_h, out_w, input.c);
    for (int in_i = 0; in_i < input.n; ++in_i)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                int y0, y1, x0, x1;
                detail::adaptive_range(oy, input.h, out_h, y0, y1);
                detail::adaptive_range(ox, input.w, out_w, x0, x1);
                float inv = 1.0f / static_cast<float>((y1 - y0) * (x1 - x0));
                for (int c = 0; c < input.c; ++c) {
                    float acc = 0.0f;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix)
                            acc += input.at(in_i, iy, ix, c);
                    out.at(in_i, oy, ox, c) = acc * inv;
                }
            }
    return out;
}

inline Tensor adaptive_avg_pool_backward(const Tensor& grad_out, int in_h, int in_w) {
    Tensor dx(grad_out.n, in_h, in_w, grad_out.c);
    for (int in_i = 0; in_i < grad_out.n; ++in_i)
        for (int oy = 0; oy < grad_out.h; ++oy)
            for (int ox = 0; ox < grad_out.w; ++ox) {
                int y0, y1, x0, x1;
                detail::adaptive_range(oy, in_h, grad_out.h, y0, y1);
                detail::adaptive_range(ox, in_w, grad_out.w, x0, x1);
                float inv = 1.0f / static_cast<float>((y1 - y0) * (x1 - x0));
                for (int c = 0; c < grad_out.c; ++c) {
                    float g = grad_out.at(in_i, oy, ox, c) * inv;
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix)
                            dx.at(in_i, iy, ix, c) += g;
                }
            }
    return dx;
}

inline Tensor global_avg_pool(const Tensor& input) {
    return adaptive_avg_pool(input, 1, 1);
}

// ---------------------------------------------------------------------------
// Bilinear resize (half-pixel centers, edge clamped)

namespace detail {
inline void bilinear_coords(int out, int in, int i, int& i0, int& i1, float& frac) {
    float src = (static_cast<float>(i) + 0.5f) * static_cast<float>(in) /
                    static_cast<float>(out) -
                0.5f;
    src = std::min(std::max(src, 0.0f), static_cast<float>(in - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, in - 1);
    frac = src - static_cast<float>(i0);
}
}  // namespace detail

inline Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw config_error("bilinear_resize: target dims must be positive");
    if (out_h == input.h && out_w == input.w) {
        Tensor out = input;
        out.grad.clear();
        return out;
    }
    Tensor out(input.n, out_h, out_w, input.c);
    for (int in_i = 0; in_i < input.n; ++in_i)
        for (int oy = 0; oy < out_h; ++oy) {
            int y0, y1;
            float fy;
            detail::bilinear_coords(out_h, input.h, oy, y0, y1, fy);
            for (int ox = 0; ox < out_w; ++ox) {
                int x0, x1;
                float fx;
                detail::bilinear_coords(out_w, input.w, ox, x0, x1, fx);
                for (int c = 0; c < input.c; ++c) {
                    float v00 = input.at(in_i, y0, x0, c);
                    float v01 = input.at(in_i, y0, x1, c);
                    float v10 = input.at(in_i, y1, x0, c);
                    float v11 = input.at(in_i, y1, x1, c);
                    float top = v00 + (v01 - v00) * fx;
                    float bot = v10 + (v11 - v10) * fx;
                    out.at(in_i, oy, ox, c) = top + (bot - top) * fy;
                }
            }
        }
    return out;
}

inline Tensor bilinear_resize_backward(const Tensor& grad_out, int in_h, int in_w) {
    Tensor dx(grad_out.n, in_h, in_w, grad_out.c);
    if (grad_out.h == in_h && grad_out.w == in_w) {
        dx.data = grad_out.data;
        return dx;
    }
    for (int in_i = 0; in_i < grad_out.n; ++in_i)
        for (int oy = 0; oy < grad_out.h; ++oy) {
            int y0, y1;
            float fy;
            detail::bilinear_coords(grad_out.h, in_h, oy, y0, y1, fy);
            for (int ox = 0; ox < grad_out.w; ++ox) {
                int x0, x1;
                float fx;
                detail::bilinear_coords(grad_out.w, in_w, ox, x0, x1, fx);
                for (int c = 0; c < grad_out.c; ++c) {
                    float g = grad_out.at(in_i, oy, ox, c);
                    dx.at(in_i, y0, x0, c) += g * (1 - fy) * (1 - fx);
                    dx.at(in_i, y0, x1, c) += g * (1 - fy) * fx;
                    dx.at(in_i, y1, x0, c) += g * fy * (1 - fx);
                    dx.at(in_i, y1, x1, c) += g * fy * fx;
                }
            }
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Concat / add

inline Tensor concat_channels(std::span<const Tensor* const> parts) {
    if (parts.empty()) throw config_error("concat_channels: no inputs");
    int total_c = 0;
    const Tensor& first = *parts[0];
    for (const Tensor* t : parts) {
        if (t->n != first.n || t->h != first.h || t->w != first.w)
            throw config_error("concat_channels: spatial dims mismatch");
        total_c += t->c;
    }
    Tensor out(first.n, first.h, first.w, total_c);
    const std::size_t pixels = static_cast<std::size_t>(first.n) * first.h * first.w;
    for (std::size_t p = 0; p < pixels; ++p) {
        float* dst = out.data.data() + p * total_c;
        for (const Tensor* t : parts) {
            const float* src = t->data.data() + p * t->c;
            std::copy(src, src + t->c, dst);
            dst += t->c;
        }
    }
    return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Tensor* parts[] = {&a, &b};
    return concat_channels(std::span<const Tensor* const>(parts, 2));
}

inline std::vector<Tensor> concat_channels_backward(const Tensor& grad_out,
                                                    std::span<const int> channel_counts) {
    std::vector<Tensor> grads;
    grads.reserve(channel_counts.size());
    for (int c : channel_counts)
        grads.emplace_back(grad_out.n, grad_out.h, grad_out.w, c);
    const std::size_t pixels =
        static_cast<std::size_t>(grad_out.n) * grad_out.h * grad_out.w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const float* src = grad_out.data.data() + p * grad_out.c;
        for (auto& g : grads) {
            std::copy(src, src + g.c, g.data.data() + p * g.c);
            src += g.c;
        }
    }
    return grads;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_dims(b)) throw config_error("add: dims mismatch");
    Tensor out(a.n, a.h, a.w, a.c);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a.data[i] + b.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over pixels

struct CrossEntropyResult {
    float loss = 0.0f;
    Tensor grad_logits;
};

// target: n*h*w class ids; ignore_id pixels contribute nothing.
inline CrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                                std::span<const std::int32_t> target,
                                                std::int32_t ignore_id = -1) {
    const int C = logits.c;
    const std::size_t pixels =
        static_cast<std::size_t>(logits.n) * logits.h * logits.w;
    if (target.size() != pixels)
        throw config_error("softmax_cross_entropy: target size mismatch");

    CrossEntropyResult r;
    r.grad_logits = Tensor(logits.n, logits.h, logits.w, logits.c);
    std::size_t valid = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
        std::int32_t t = target[p];
        if (t == ignore_id) continue;
        if (t < 0 || t >= C)
            throw data_error("softmax_cross_entropy: class id out of range");
        ++valid;
    }
    if (valid == 0) return r;  // defined: loss 0, zero gradient

    double loss_acc = 0.0;
    const float inv_count = 1.0f / static_cast<float>(valid);
    std::vector<float> prob(C);
    for (std::size_t p = 0; p < pixels; ++p) {
        std::int32_t t = target[p];
        if (t == ignore_id) continue;
        const float* row = logits.data.data() + p * C;
        float mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        float denom = 0.0f;
        for (int c = 0; c < C; ++c) {
            prob[c] = std::exp(row[c] - mx);
            denom += prob[c];
        }
        float inv_denom = 1.0f / denom;
        float* grow = r.grad_logits.data.data() + p * C;
        for (int c = 0; c < C; ++c) {
            prob[c] *= inv_denom;
            grow[c] = (prob[c] - (c == t ? 1.0f : 0.0f)) * inv_count;
        }
        loss_acc += -std::log(std::max(prob[t], 1e-30f));
    }
    r.loss = static_cast<float>(loss_acc / static_cast<double>(valid));
    return r;
}

}  // namespace cmsnet
