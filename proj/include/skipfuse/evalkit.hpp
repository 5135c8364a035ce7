#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "skipfuse/types.hpp"

namespace skipfuse::eval {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = 0);

    /// Counts one point; points labeled `ignore_label` in gt only bump the
    /// ignore count. Throws InputError for labels outside the class range.
    void add(int gt, int pred, int ignore_label = kIgnoreLabel);
    void add(std::span<const int> gt, std::span<const int> pred, int ignore_label = kIgnoreLabel);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix& other) const = default;

    int num_classes() const { return classes_; }
    std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * classes_ + pred)]; }
    std::int64_t ignored() const { return ignored_; }
    std::int64_t total() const;

private:
    int classes_;
    std::vector<std::int64_t> counts_;
    std::int64_t ignored_ = 0;
};

struct MiouResult {
    std::vector<std::optional<double>> per_class;  // empty for classes absent from gt and pred
    double mean = 0.0;
    int counted = 0;
};

/// IoU_c = TP / (TP + FP + FN). The mean skips classes that appear in
/// neither gt nor prediction.
MiouResult miou(const ConfusionMatrix& confusion);
MiouResult miou(std::span<const int> pred, std::span<const int> gt, int num_classes, int ignore_label = kIgnoreLabel);

struct SplitMiou {
    std::optional<MiouResult> visible;    // unset when the split is empty
    std::optional<MiouResult> invisible;
    ConfusionMatrix visible_confusion;
    ConfusionMatrix invisible_confusion;
};

/// mIoU restricted to `visible_set` and to its complement.
SplitMiou split_miou(std::span<const int> pred, std::span<const int> gt, std::span<const int> visible_set,
                     int num_classes, int ignore_label = kIgnoreLabel);

/// Per-point colors from the top three principal directions of the
/// features: centered, projected, min-max scaled per channel. Each direction
/// is signed so its largest-magnitude loading is positive. Channels beyond
/// the feature rank (or with zero range) are 0.5. Requires M >= 3.
Matrix pca_rgb(const Matrix& features);

}  // namespace skipfuse::eval
