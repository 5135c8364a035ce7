#include "skipfuse/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "skipfuse/error.hpp"

namespace skipfuse::eval {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

void ConfusionMatrix::add(int gt, int pred, int ignore_label) {
    if (gt == ignore_label) {
        ++ignored_;
        return;
    }
    if (gt < 0 || gt >= classes_ || pred < 0 || pred >= classes_)
        throw InputError("confusion matrix: label outside [0, " + std::to_string(classes_) + ")");
    ++counts_[static_cast<std::size_t>(gt * classes_ + pred)];
}

void ConfusionMatrix::add(std::span<const int> gt, std::span<const int> pred, int ignore_label) {
    if (gt.size() != pred.size()) throw ShapeError("confusion matrix: prediction and ground truth lengths differ");
    for (std::size_t i = 0; i < gt.size(); ++i) add(gt[i], pred[i], ignore_label);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw ShapeError("confusion matrix: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    ignored_ += other.ignored_;
    return *this;
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t sum = 0;
    for (auto c : counts_) sum += c;
    return sum;
}

MiouResult miou(const ConfusionMatrix& confusion) {
    const int n = confusion.num_classes();
    MiouResult out;
    out.per_class.resize(static_cast<std::size_t>(n));
    double sum = 0.0;
    for (int c = 0; c < n; ++c) {
        std::int64_t tp = confusion.at(c, c);
        std::int64_t fn = 0;
        std::int64_t fp = 0;
        for (int k = 0; k < n; ++k) {
            if (k == c) continue;
            fn += confusion.at(c, k);
            fp += confusion.at(k, c);
        }
        const std::int64_t denom = tp + fp + fn;
        if (denom == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(denom);
        out.per_class[static_cast<std::size_t>(c)] = iou;
        sum += iou;
        ++out.counted;
    }
    out.mean = out.counted > 0 ? sum / out.counted : 0.0;
    return out;
}

MiouResult miou(std::span<const int> pred, std::span<const int> gt, int num_classes, int ignore_label) {
    ConfusionMatrix confusion(num_classes);
    confusion.add(gt, pred, ignore_label);
    return miou(confusion);
}

SplitMiou split_miou(std::span<const int> pred, std::span<const int> gt, std::span<const int> visible_set,
                     int num_classes, int ignore_label) {
    if (gt.size() != pred.size()) throw ShapeError("split_miou: prediction and ground truth lengths differ");
    std::vector<char> visible(gt.size(), 0);
    for (int i : visible_set) {
        if (i < 0 || static_cast<std::size_t>(i) >= gt.size()) throw ShapeError("split_miou: visible index out of range");
        visible[static_cast<std::size_t>(i)] = 1;
    }
    SplitMiou out{std::nullopt, std::nullopt, ConfusionMatrix(num_classes), ConfusionMatrix(num_classes)};
    for (std::size_t i = 0; i < gt.size(); ++i)
        (visible[i] ? out.visible_confusion : out.invisible_confusion).add(gt[i], pred[i], ignore_label);
    if (out.visible_confusion.total() > 0) out.visible = miou(out.visible_confusion);
    if (out.invisible_confusion.total() > 0) out.invisible = miou(out.invisible_confusion);
    return out;
}

Matrix pca_rgb(const Matrix& features) {
    const auto m = features.rows();
    if (m < 3) throw InputError("pca_rgb: at least three points are required");
    const auto d = features.cols();
    const RowVector mean = features.colwise().mean();
    const Matrix centered = features.rowwise() - mean;
    const Eigen::MatrixXd covariance = (centered.transpose() * centered) / static_cast<double>(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
    // eigenvalues ascend; take from the back
    const auto& values = solver.eigenvalues();
    const double largest = d > 0 ? std::max(values[d - 1], 0.0) : 0.0;
    const double tolerance = largest * 1e-12 * static_cast<double>(std::max<Eigen::Index>(d, 1));

    Matrix out = Matrix::Constant(m, 3, 0.5);
    for (int c = 0; c < 3 && c < d; ++c) {
        const Eigen::Index k = d - 1 - c;
        if (!(values[k] > tolerance)) break;
        Eigen::VectorXd dir = solver.eigenvectors().col(k);
        Eigen::Index lead = 0;
        for (Eigen::Index i = 1; i < d; ++i)
            if (std::abs(dir[i]) > std::abs(dir[lead])) lead = i;
        if (dir[lead] < 0) dir = -dir;
        const Eigen::VectorXd proj = centered * dir;
        const double lo = proj.minCoeff();
        const double hi = proj.maxCoeff();
        if (!(hi > lo)) continue;
        out.col(c) = (proj.array() - lo) / (hi - lo);
    }
    return out;
}

}  // namespace skipfuse::eval
