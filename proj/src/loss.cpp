#include "skipfuse/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "skipfuse/error.hpp"

namespace skipfuse::loss {

LossValue cosine_loss(const Matrix& pred, const Matrix& target, std::span<const int> visible) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw ShapeError("cosine_loss: prediction and target shapes differ");
    if (visible.empty()) throw EmptyVisibleSet();

    LossValue out;
    out.gradient = Matrix::Zero(pred.rows(), pred.cols());
    const double scale = 1.0 / static_cast<double>(visible.size());
    double total = 0.0;
    for (int i : visible) {
        if (i < 0 || i >= pred.rows()) throw ShapeError("cosine_loss: visible index out of range");
        const auto p = pred.row(i);
        const auto t = target.row(i);
        const double tn = t.norm();
        if (tn < kMinTargetNorm)
            throw DataError("cosine_loss: visible target row " + std::to_string(i) + " is zero");
        // Norms are floored at kCosineEpsilon. The product of squared norms
        // goes through a single sqrt so identical rows give a cosine of exactly 1.
        const double eps2 = kCosineEpsilon * kCosineEpsilon;
        const double pp = p.squaredNorm();
        const double q = std::max(pp, eps2);
        const double r = std::max(t.squaredNorm(), eps2);
        const double denom = std::sqrt(q * r);
        const double dot = p.dot(t);
        total += 1.0 - dot / denom;
        auto grad = out.gradient.row(i);
        grad = -scale * t / denom;
        if (pp >= eps2) grad += scale * (dot / (q * denom)) * p;
    }
    out.value = total * scale;
    return out;
}

LossValue cross_entropy(const Matrix& logits, std::span<const int> labels, int ignore_label) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
        throw ShapeError("cross_entropy: label count does not match logits");
    LossValue out;
    out.gradient = Matrix::Zero(logits.rows(), logits.cols());
    std::size_t counted = 0;
    for (int label : labels)
        if (label != ignore_label) ++counted;
    if (counted == 0) return out;
    const double scale = 1.0 / static_cast<double>(counted);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label == ignore_label) continue;
        if (label < 0 || label >= logits.cols())
            throw DataError("cross_entropy: label " + std::to_string(label) + " outside the class range");
        const auto row = logits.row(i);
        const double peak = row.maxCoeff();
        const RowVector e = (row.array() - peak).exp().matrix();
        const double sum = e.sum();
        total += std::log(sum) + peak - row(label);
        out.gradient.row(i) = scale * e / sum;
        out.gradient(i, label) -= scale;
    }
    out.value = total * scale;
    return out;
}

}  // namespace skipfuse::loss
