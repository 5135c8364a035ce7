#pragma once

#include <span>

#include "skipfuse/types.hpp"

namespace skipfuse::loss {

struct LossValue {
    double value = 0.0;
    Matrix gradient;  // d value / d prediction
};

inline constexpr double kCosineEpsilon = 1e-12;
/// Visible target rows shorter than this indicate a corrupted bundle.
inline constexpr double kMinTargetNorm = 1e-9;

/// Mean over the visible rows of 1 - cos(pred_i, target_i), with each norm
/// floored at kCosineEpsilon. Rows outside `visible` get zero gradient.
/// Throws EmptyVisibleSet when `visible` is empty and DataError when a
/// visible target row is (numerically) zero.
LossValue cosine_loss(const Matrix& pred, const Matrix& target, std::span<const int> visible);

/// Mean softmax cross-entropy over points whose label is not `ignore_label`.
/// With no labeled points the loss is 0 with a zero gradient.
LossValue cross_entropy(const Matrix& logits, std::span<const int> labels, int ignore_label = kIgnoreLabel);

}  // namespace skipfuse::loss
