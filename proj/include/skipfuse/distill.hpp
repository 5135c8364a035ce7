#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skipfuse/types.hpp"

namespace skipfuse::distill {

/// Per-domain batch proportions. Every batch holds scenes of one domain.
struct MixSchedule {
    std::vector<double> proportions;  // normalized to sum 1

    /// Normalizes positive weights; throws ConfigError otherwise.
    static MixSchedule from_weights(std::span<const double> weights);
    static MixSchedule uniform(int domains);
    int domains() const { return static_cast<int>(proportions.size()); }
};

/// Deterministic proportional interleaving: step t goes to the domain with
/// the largest deficit (t + 1) p_d - count_d, ties to the lowest index.
/// Realized counts never drift from t p_d by a full batch.
std::vector<int> schedule_batches(const MixSchedule& schedule, std::int64_t steps);

/// Stride selection over `n` sorted scene ids: count = floor(fraction n),
/// indices floor(j n / count) shifted by a seed-dependent offset that stays
/// inside the first stride. Throws InputError when fraction is outside
/// (0, 1] or selects nothing.
std::vector<int> finetune_subset(int n, double fraction, std::uint64_t seed);

struct ClassSeparation {
    double within = 0.0;  // mean cos(pred_i, prototype_{label_i})
    double cross = 0.0;   // mean cos(pred_i, prototype_c), c != label_i
    std::int64_t points = 0;

    double gap() const { return within - cross; }
};

/// Accumulates cosine similarities between predicted features and class
/// prototypes over labeled rows.
void accumulate_separation(ClassSeparation& acc, const Matrix& predicted, std::span<const int> labels,
                           const Matrix& prototypes, int ignore_label = kIgnoreLabel);
ClassSeparation finish(const ClassSeparation& acc);

}  // namespace skipfuse::distill
