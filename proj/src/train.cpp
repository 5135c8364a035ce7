#include "skipfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "skipfuse/error.hpp"
#include "skipfuse/loss.hpp"

namespace skipfuse::net {

double learning_rate(const OptimizerConfig& config, double position) {
    const double start = config.peak_lr / config.div_factor;
    const double end = start / config.final_div_factor;
    position = std::clamp(position, 0.0, 1.0);
    if (position < config.pct_start) return start + (config.peak_lr - start) * position / config.pct_start;
    if (config.pct_start >= 1.0) return config.peak_lr;
    const double progress = (position - config.pct_start) / (1.0 - config.pct_start);
    return end + (config.peak_lr - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_update(ToyNet& net, const std::vector<Matrix>& gradients, OptimizerState& state,
                  const OptimizerConfig& config, double lr) {
    auto& params = net.parameters();
    if (state.first_moment.size() != params.size()) {
        state.first_moment.clear();
        state.second_moment.clear();
        for (const auto& p : params) {
            state.first_moment.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
            state.second_moment.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const double group_lr = lr * (p.head ? config.head_lr_scale : config.trunk_lr_scale);
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const Matrix& g = gradients[i];
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
        if (p.decay) p.value *= 1.0 - group_lr * config.weight_decay;
        p.value.array() -= group_lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config.epsilon);
    }
    net.touch();
}

namespace {

void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw NumericalError("non-finite values in " + what);
}

}  // namespace

double train_step(ToyNet& net, const Batch& batch, LossKind loss_kind, OptimizerState& state,
                  const OptimizerConfig& config, double schedule_position) {
    const bool segmentation = net.config().head == Head::Segmentation;
    if ((loss_kind == LossKind::CrossEntropy) != segmentation)
        throw ConfigError("train_step: loss does not match the active " + to_string(net.config().head) + " head");

    auto result = forward(net, batch.input, Mode::Train);
    require_finite(result.output, "network output");
    const auto loss = loss_kind == LossKind::CrossEntropy
                          ? loss::cross_entropy(result.output, batch.labels)
                          : loss::cosine_loss(result.output, batch.targets, batch.visible);
    if (!std::isfinite(loss.value)) throw NumericalError("non-finite loss");
    require_finite(loss.gradient, "loss gradient");

    auto grads = backward(net, result.cache, loss.gradient);
    for (std::size_t i = 0; i < grads.params.size(); ++i)
        require_finite(grads.params[i], "gradient of " + net.parameters()[i].name);

    commit_statistics(net, result.cache);
    adamw_update(net, grads.params, state, config, learning_rate(config, schedule_position));
    return loss.value;
}

}  // namespace skipfuse::net
