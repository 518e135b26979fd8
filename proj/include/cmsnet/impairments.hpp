#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cmsnet/image.hpp"
#include "cmsnet/metrics.hpp"

namespace cmsnet {

// ---------------------------------------------------------------------------
// Additive Gaussian noise

// Pre-clamp noise values, N(0, (severity*255)^2), deterministic per seed.
inline std::vector<float> gaussian_noise_field(std::size_t count, double severity,
                                               unsigned seed) {
    if (severity < 0.0 || severity > 1.0)
        throw config_error("noise severity must be in [0,1]");
    std::vector<float> field(count, 0.0f);
    if (severity == 0.0) return field;
    std::mt19937 rng(seed);
    std::normal_distribution<float> dist(0.0f, static_cast<float>(severity * 255.0));
    for (auto& v : field) v = dist(rng);
    return field;
}

inline Image add_gaussian_noise(const Image& img, double severity, unsigned seed) {
    if (severity < 0.0 || severity > 1.0)
        throw config_error("noise severity must be in [0,1]");
    if (severity == 0.0) return img;
    Image out = img;
    auto field = gaussian_noise_field(img.data.size(), severity, seed);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        float v = static_cast<float>(img.data[i]) + field[i];
        out.data[i] = static_cast<std::uint8_t>(
            std::min(std::max(std::lround(v), 0L), 255L));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parametric fog: out = (1-a)*img + a*255 with a = density * m(x,y).
// m is a seeded multi-octave value-noise field in [0.6, 1.0] biased to grow
// toward the top of the frame (depth cue).

struct FogOptions {
    bool uniform_field = false;  // test hook: m == 1 everywhere
};

namespace detail {

// value noise on a lattice, bilinear interpolation, 3 octaves
inline std::vector<float> value_noise(int h, int w, unsigned seed) {
    std::vector<float> field(static_cast<std::size_t>(h) * w, 0.0f);
    std::mt19937 rng(seed);
    float total_amp = 0.0f;
    for (int octave = 0; octave < 3; ++octave) {
        int cell = std::max(4, 32 >> octave);
        float amp = 1.0f / static_cast<float>(1 << octave);
        total_amp += amp;
        int gh = h / cell + 2, gw = w / cell + 2;
        std::vector<float> lattice(static_cast<std::size_t>(gh) * gw);
        std::uniform_real_distribution<float> unit(0.0f, 1.0f);
        for (auto& v : lattice) v = unit(rng);
        for (int y = 0; y < h; ++y) {
            float fy = static_cast<float>(y) / cell;
            int y0 = static_cast<int>(fy);
            float ty = fy - y0;
            for (int x = 0; x < w; ++x) {
                float fx = static_cast<float>(x) / cell;
                int x0 = static_cast<int>(fx);
                float tx = fx - x0;
                float v00 = lattice[y0 * gw + x0];
                float v01 = lattice[y0 * gw + x0 + 1];
                float v10 = lattice[(y0 + 1) * gw + x0];
                float v11 = lattice[(y0 + 1) * gw + x0 + 1];
                float top = v00 + (v01 - v00) * tx;
                float bot = v10 + (v11 - v10) * tx;
                field[static_cast<std::size_t>(y) * w + x] +=
                    amp * (top + (bot - top) * ty);
            }
        }
    }
    for (auto& v : field) v /= total_amp;
    return field;
}

}  // namespace detail

inline Image apply_fog(const Image& img, double density, unsigned seed,
                       FogOptions opts = {}) {
    if (density < 0.0 || density > 1.0)
        throw config_error("fog density must be in [0,1]");
    if (density == 0.0) return img;
    Image out = img;
    std::vector<float> noise;
    if (!opts.uniform_field)
        noise = detail::value_noise(img.h, img.w, seed);
    for (int y = 0; y < img.h; ++y) {
        float depth = img.h > 1
                          ? 1.0f - static_cast<float>(y) / static_cast<float>(img.h - 1)
                          : 1.0f;
        for (int x = 0; x < img.w; ++x) {
            float m = 1.0f;
            if (!opts.uniform_field) {
                float n = noise[static_cast<std::size_t>(y) * img.w + x];
                m = 0.6f + 0.4f * (0.5f * n + 0.5f * depth);
            }
            float a = static_cast<float>(density) * m;
            for (int ch = 0; ch < img.c; ++ch) {
                float v = (1.0f - a) * img.at(y, x, ch) + a * 255.0f;
                out.at(y, x, ch) = static_cast<std::uint8_t>(
                    std::min(std::max(std::lround(v), 0L), 255L));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Data augmentation: rotation, crop, optional noise/fog. The mask follows the
// image through every geometric transform (nearest-neighbor sampling).

struct AugmentConfig {
    double p_rotate = 0.5;
    double p_crop = 0.5;
    double p_noise = 0.25;
    double p_fog = 0.25;
    double max_rotate_deg = 10.0;
    double min_crop_scale = 0.8;
    double max_noise_severity = 0.25;
    double max_fog_density = 0.5;
};

namespace detail {

inline void rotate_pair(Image& img, Mask& mask, double deg) {
    const double rad = deg * 3.14159265358979323846 / 180.0;
    const double ca = std::cos(rad), sa = std::sin(rad);
    const double cy = (img.h - 1) / 2.0, cx = (img.w - 1) / 2.0;
    Image src_img = img;
    Mask src_mask = mask;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            // inverse rotation into the source frame
            double dx = x - cx, dy = y - cy;
            double sx = ca * dx + sa * dy + cx;
            double sy = -sa * dx + ca * dy + cy;
            double sxc = std::min(std::max(sx, 0.0), img.w - 1.0);
            double syc = std::min(std::max(sy, 0.0), img.h - 1.0);
            int x0 = static_cast<int>(sxc), y0 = static_cast<int>(syc);
            int x1 = std::min(x0 + 1, img.w - 1), y1 = std::min(y0 + 1, img.h - 1);
            double tx = sxc - x0, ty = syc - y0;
            for (int ch = 0; ch < img.c; ++ch) {
                double top = src_img.at(y0, x0, ch) +
                             (src_img.at(y0, x1, ch) - src_img.at(y0, x0, ch)) * tx;
                double bot = src_img.at(y1, x0, ch) +
                             (src_img.at(y1, x1, ch) - src_img.at(y1, x0, ch)) * tx;
                img.at(y, x, ch) = static_cast<std::uint8_t>(
                    std::lround(top + (bot - top) * ty));
            }
            mask.at(y, x) = src_mask.at(static_cast<int>(std::lround(syc)),
                                        static_cast<int>(std::lround(sxc)));
        }
}

inline void crop_resize_pair(Image& img, Mask& mask, double scale, double ox,
                             double oy) {
    const int ch0 = static_cast<int>(img.h * scale);
    const int cw0 = static_cast<int>(img.w * scale);
    const int y_off = static_cast<int>((img.h - ch0) * oy);
    const int x_off = static_cast<int>((img.w - cw0) * ox);
    Image src_img = img;
    Mask src_mask = mask;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double sy = y_off + (y + 0.5) * ch0 / img.h - 0.5;
            double sx = x_off + (x + 0.5) * cw0 / img.w - 0.5;
            sy = std::min(std::max(sy, 0.0), img.h - 1.0);
            sx = std::min(std::max(sx, 0.0), img.w - 1.0);
            int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
            int y1 = std::min(y0 + 1, img.h - 1), x1 = std::min(x0 + 1, img.w - 1);
            double ty = sy - y0, tx = sx - x0;
            for (int c = 0; c < img.c; ++c) {
                double top = src_img.at(y0, x0, c) +
                             (src_img.at(y0, x1, c) - src_img.at(y0, x0, c)) * tx;
                double bot = src_img.at(y1, x0, c) +
                             (src_img.at(y1, x1, c) - src_img.at(y1, x0, c)) * tx;
                img.at(y, x, c) =
                    static_cast<std::uint8_t>(std::lround(top + (bot - top) * ty));
            }
            mask.at(y, x) = src_mask.at(static_cast<int>(std::lround(sy)),
                                        static_cast<int>(std::lround(sx)));
        }
}

}  // namespace detail

inline void augment(Image& img, Mask& mask, unsigned seed,
                    const AugmentConfig& cfg = {}) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < cfg.p_rotate) {
        double deg = (unit(rng) * 2.0 - 1.0) * cfg.max_rotate_deg;
        detail::rotate_pair(img, mask, deg);
    }
    if (unit(rng) < cfg.p_crop) {
        double scale = cfg.min_crop_scale + unit(rng) * (1.0 - cfg.min_crop_scale);
        double ox = unit(rng), oy = unit(rng);
        detail::crop_resize_pair(img, mask, scale, ox, oy);
    }
    if (unit(rng) < cfg.p_noise) {
        double severity = unit(rng) * cfg.max_noise_severity;
        img = add_gaussian_noise(img, severity, rng());
    }
    if (unit(rng) < cfg.p_fog) {
        double density = unit(rng) * cfg.max_fog_density;
        img = apply_fog(img, density, rng());
    }
}

// ---------------------------------------------------------------------------
// Condition-mix sweep: evaluate a predictor on a mixture that shifts from
// all-good to all-bad samples.

struct EvalSample {
    Image image;
    Mask gt;
};

using Predictor = std::function<Mask(const Image&)>;

struct SweepPoint {
    double fraction;
    double miou_value;
};

inline std::vector<double> default_fractions() {
    std::vector<double> f;
    for (int i = 0; i <= 10; ++i) f.push_back(i / 10.0);
    return f;
}

// At fraction f the evaluation set is the first ceil((1-f)*S) good samples
// plus the first floor(f*S) bad samples; inputs must already be in sorted-id
// order.
inline std::vector<SweepPoint> condition_sweep(
    const Predictor& predict_fn, const std::vector<EvalSample>& good,
    const std::vector<EvalSample>& bad, int num_classes, std::size_t eval_size,
    const std::vector<double>& fractions = default_fractions(),
    std::int32_t ignore_id = -1) {
    if (good.empty() || bad.empty())
        throw config_error("condition_sweep: empty sample set");
    if (eval_size > good.size() || eval_size > bad.size())
        throw config_error("condition_sweep: eval size exceeds a sample set");

    std::vector<SweepPoint> curve;
    for (double f : fractions) {
        if (f < 0.0 || f > 1.0)
            throw config_error("condition_sweep: fraction outside [0,1]");
        std::size_t n_bad =
            static_cast<std::size_t>(std::llround(f * static_cast<double>(eval_size)));
        std::size_t n_good = eval_size - n_bad;
        ConfusionMatrix cm(num_classes);
        auto eval_one = [&](const EvalSample& s) {
            Mask pred = predict_fn(s.image);
            accumulate(cm, std::span<const std::int32_t>(s.gt.data),
                       std::span<const std::int32_t>(pred.data), ignore_id);
        };
        for (std::size_t i = 0; i < n_good; ++i) eval_one(good[i]);
        for (std::size_t i = 0; i < n_bad; ++i) eval_one(bad[i]);
        curve.push_back({f, miou(cm)});
    }
    return curve;
}

// mIoU(f=0) - mIoU(f=1) in percentage points.
inline double degradation(const std::vector<SweepPoint>& curve) {
    if (curve.empty()) throw config_error("degradation: empty curve");
    const SweepPoint* first = nullptr;
    const SweepPoint* last = nullptr;
    for (const auto& p : curve) {
        if (p.fraction == 0.0) first = &p;
        if (p.fraction == 1.0) last = &p;
    }
    if (!first || !last)
        throw config_error("degradation: curve must include fractions 0 and 1");
    return (first->miou_value - last->miou_value) * 100.0;
}

}  // namespace cmsnet
