#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skipfuse/net.hpp"

namespace skipfuse::net {

/// AdamW with decoupled weight decay and a warmup-then-cosine schedule.
struct OptimizerConfig {
    double peak_lr = 6e-3;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double pct_start = 0.05;        // schedule position of the peak
    double div_factor = 25.0;       // start LR = peak / div_factor
    double final_div_factor = 1e4;  // end LR = start / final_div_factor
    double trunk_lr_scale = 1.0;
    double head_lr_scale = 1.0;
};

/// Learning rate at schedule position in [0, 1]: linear warmup from
/// peak / div_factor to peak at pct_start, then cosine decay.
double learning_rate(const OptimizerConfig& config, double position);

struct OptimizerState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::int64_t step = 0;

    void reset() {
        first_moment.clear();
        second_moment.clear();
        step = 0;
    }
};

enum class LossKind { CrossEntropy, Cosine };

/// One scene from a single domain. `labels` feeds cross-entropy;
/// `targets` and `visible` feed the cosine loss.
struct Batch {
    NetInput input;
    std::vector<int> labels;
    Matrix targets;
    std::vector<int> visible;
};

/// Forward, loss, backward, one AdamW update. Returns the loss before the
/// update. Throws NumericalError naming the first non-finite tensor and
/// ConfigError when the loss does not fit the active head.
double train_step(ToyNet& net, const Batch& batch, LossKind loss_kind, OptimizerState& state,
                  const OptimizerConfig& config, double schedule_position);

/// Applies one AdamW update with precomputed gradients.
void adamw_update(ToyNet& net, const std::vector<Matrix>& gradients, OptimizerState& state,
                  const OptimizerConfig& config, double lr);

}  // namespace skipfuse::net
