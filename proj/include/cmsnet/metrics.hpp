#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmsnet/common.hpp"

namespace cmsnet {

// C x C pixel counts: counts[i][j] = pixels of true class i predicted as j.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::uint64_t> counts;  // row-major C x C

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes)
        : num_classes(classes),
          counts(static_cast<std::size_t>(classes) * classes, 0) {
        if (classes < 1) throw config_error("confusion matrix needs >= 1 class");
    }

    std::uint64_t& at(int gt, int pred) {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }
    std::uint64_t at(int gt, int pred) const {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto v : counts) t += v;
        return t;
    }
    std::uint64_t row_sum(int i) const {  // t_i: ground-truth pixels of class i
        std::uint64_t t = 0;
        for (int j = 0; j < num_classes; ++j) t += at(i, j);
        return t;
    }
    std::uint64_t col_sum(int i) const {  // pixels predicted as class i
        std::uint64_t t = 0;
        for (int j = 0; j < num_classes; ++j) t += at(j, i);
        return t;
    }

    // Mergeable partials: elementwise sum.
    void merge(const ConfusionMatrix& other) {
        if (other.num_classes != num_classes)
            throw config_error("confusion matrix merge: class count mismatch");
        for (std::size_t i = 0; i < counts.size(); ++i)
            counts[i] += other.counts[i];
    }
};

inline void accumulate(ConfusionMatrix& cm, std::span<const std::int32_t> gt,
                       std::span<const std::int32_t> pred,
                       std::int32_t ignore_id = -1) {
    if (gt.size() != pred.size())
        throw config_error("accumulate: mask size mismatch");
    for (std::size_t p = 0; p < gt.size(); ++p) {
        std::int32_t t = gt[p];
        if (t == ignore_id) continue;
        std::int32_t q = pred[p];
        if (t < 0 || t >= cm.num_classes || q < 0 || q >= cm.num_classes)
            throw data_error("accumulate: class id out of range at pixel " +
                             std::to_string(p));
        ++cm.at(t, q);
    }
}

namespace detail {
inline void require_nonempty(const ConfusionMatrix& cm) {
    if (cm.total() == 0)
        throw data_error("metric undefined: empty confusion matrix");
}
}  // namespace detail

inline double pixel_accuracy(const ConfusionMatrix& cm) {
    detail::require_nonempty(cm);
    std::uint64_t diag = 0;
    for (int i = 0; i < cm.num_classes; ++i) diag += cm.at(i, i);
    return static_cast<double>(diag) / static_cast<double>(cm.total());
}

inline double class_pixel_accuracy(const ConfusionMatrix& cm, int i) {
    detail::require_nonempty(cm);
    std::uint64_t t = cm.row_sum(i);
    if (t == 0) throw data_error("class_pixel_accuracy undefined: class absent");
    return static_cast<double>(cm.at(i, i)) / static_cast<double>(t);
}

// Classes absent from the ground truth are excluded from the mean.
inline double mean_accuracy(const ConfusionMatrix& cm) {
    detail::require_nonempty(cm);
    double sum = 0.0;
    int present = 0;
    for (int i = 0; i < cm.num_classes; ++i) {
        std::uint64_t t = cm.row_sum(i);
        if (t == 0) continue;
        sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(t);
        ++present;
    }
    return sum / present;
}

inline double iou(const ConfusionMatrix& cm, int i) {
    detail::require_nonempty(cm);
    std::uint64_t inter = cm.at(i, i);
    std::uint64_t uni = cm.row_sum(i) + cm.col_sum(i) - inter;
    if (uni == 0) throw data_error("iou undefined: class absent from gt and pred");
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Classes absent from both ground truth and prediction are excluded.
inline double miou(const ConfusionMatrix& cm) {
    detail::require_nonempty(cm);
    double sum = 0.0;
    int present = 0;
    for (int i = 0; i < cm.num_classes; ++i) {
        std::uint64_t inter = cm.at(i, i);
        std::uint64_t uni = cm.row_sum(i) + cm.col_sum(i) - inter;
        if (uni == 0) continue;
        sum += static_cast<double>(inter) / static_cast<double>(uni);
        ++present;
    }
    return sum / present;
}

inline double fwiou(const ConfusionMatrix& cm) {
    detail::require_nonempty(cm);
    double sum = 0.0;
    std::uint64_t total = 0;
    for (int i = 0; i < cm.num_classes; ++i) {
        std::uint64_t t = cm.row_sum(i);
        total += t;
        if (t == 0) continue;
        std::uint64_t inter = cm.at(i, i);
        std::uint64_t uni = t + cm.col_sum(i) - inter;
        sum += static_cast<double>(t) * static_cast<double>(inter) /
               static_cast<double>(uni);
    }
    return sum / static_cast<double>(total);
}

}  // namespace cmsnet
