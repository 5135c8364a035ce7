#include "skipfuse/distill.hpp"

#include <cmath>

#include "skipfuse/error.hpp"

namespace skipfuse::distill {

MixSchedule MixSchedule::from_weights(std::span<const double> weights) {
    if (weights.empty()) throw ConfigError("mix schedule needs at least one domain");
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("mix schedule proportions must be positive");
        total += w;
    }
    MixSchedule s;
    for (double w : weights) s.proportions.push_back(w / total);
    return s;
}

MixSchedule MixSchedule::uniform(int domains) {
    const std::vector<double> w(static_cast<std::size_t>(domains), 1.0);
    return from_weights(w);
}

std::vector<int> schedule_batches(const MixSchedule& schedule, std::int64_t steps) {
    const int d = schedule.domains();
    if (d == 0) throw ConfigError("mix schedule has no domains");
    std::vector<std::int64_t> counts(static_cast<std::size_t>(d), 0);
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(std::max<std::int64_t>(steps, 0)));
    for (std::int64_t t = 0; t < steps; ++t) {
        int best = 0;
        double best_deficit = -1e300;
        for (int k = 0; k < d; ++k) {
            const double deficit =
                static_cast<double>(t + 1) * schedule.proportions[static_cast<std::size_t>(k)] -
                static_cast<double>(counts[static_cast<std::size_t>(k)]);
            if (deficit > best_deficit + 1e-9) {
                best = k;
                best_deficit = deficit;
            }
        }
        ++counts[static_cast<std::size_t>(best)];
        out.push_back(best);
    }
    return out;
}

std::vector<int> finetune_subset(int n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw InputError("label fraction must be in (0, 1], got " + std::to_string(fraction));
    const int count = static_cast<int>(std::floor(fraction * n + 1e-9));
    if (count <= 0)
        throw InputError("label fraction " + std::to_string(fraction) + " of " + std::to_string(n) +
                         " scenes selects no scene");
    const int stride = n / count;
    const int offset = static_cast<int>(seed % static_cast<std::uint64_t>(stride));
    std::vector<int> out;
    for (int j = 0; j < count; ++j)
        out.push_back(static_cast<int>(static_cast<std::int64_t>(j) * n / count) + offset);
    return out;
}

void accumulate_separation(ClassSeparation& acc, const Matrix& predicted, std::span<const int> labels,
                           const Matrix& prototypes, int ignore_label) {
    if (static_cast<std::size_t>(predicted.rows()) != labels.size())
        throw ShapeError("class separation: label count does not match predictions");
    if (predicted.cols() != prototypes.cols()) throw ShapeError("class separation: feature dimension mismatch");
    const auto classes = prototypes.rows();
    if (classes < 2) throw InputError("class separation needs at least two prototypes");
    for (Eigen::Index i = 0; i < predicted.rows(); ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label == ignore_label) continue;
        const double norm = predicted.row(i).norm();
        double cross = 0.0;
        for (Eigen::Index c = 0; c < classes; ++c) {
            const double cos = norm > 0.0 ? predicted.row(i).dot(prototypes.row(c)) / (norm * prototypes.row(c).norm()) : 0.0;
            if (c == label) acc.within += cos;
            else cross += cos;
        }
        acc.cross += cross / static_cast<double>(classes - 1);
        ++acc.points;
    }
}

ClassSeparation finish(const ClassSeparation& acc) {
    ClassSeparation out = acc;
    if (acc.points > 0) {
        out.within /= static_cast<double>(acc.points);
        out.cross /= static_cast<double>(acc.points);
    }
    return out;
}

}  // namespace skipfuse::distill
