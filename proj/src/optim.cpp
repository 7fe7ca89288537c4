#include "mpct/optim.hpp"

#include <cmath>

#include "mpct/common.hpp"

namespace mpct {

OptimizerState::OptimizerState(AdamConfig config) : config_(config) {
    if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0)) {
        throw ConfigError("adam beta1 must be in [0, 1)");
    }
    if (!(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
        throw ConfigError("adam beta2 must be in [0, 1)");
    }
    if (!(config_.eps > 0.0)) {
        throw ConfigError("adam eps must be positive");
    }
}

bool OptimizerState::has(const std::string& name) const { return slots_.count(name) != 0; }

const std::vector<double>& OptimizerState::first_moment(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) {
        throw ConfigError("optimizer state has no slot for parameter: " + name);
    }
    return it->second.m;
}

const std::vector<double>& OptimizerState::second_moment(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) {
        throw ConfigError("optimizer state has no slot for parameter: " + name);
    }
    return it->second.v;
}

void adam_step(OptimizerState& state, const ParamSet& params, const Gradients& grads, double lr) {
    if (!(lr > 0.0)) {
        throw ConfigError("adam_step requires lr > 0");
    }

    // Resolve every gradient and validate everything up front; only then
    // mutate. A step that throws must not leave a half-updated model.
    const auto& items = params.items();
    std::vector<const std::vector<double>*> gvals(items.size(), nullptr);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Tensor g = (i < grads.names.size() && grads.names[i] == items[i].name)
                             ? grads.grads[i]
                             : grads.by_name(items[i].name);
        if (g.numel() != items[i].tensor.numel()) {
            throw ShapeError("gradient shape " + format_shape(g.shape()) +
                             " does not match parameter " + items[i].name + " " +
                             format_shape(items[i].tensor.shape()));
        }
        check_finite(g.values(), "gradient of " + items[i].name);
        // keep the node alive via grads; only the value buffer is needed
        gvals[i] = &g.node()->v;
        auto slot = state.slots_.find(items[i].name);
        if (slot != state.slots_.end() && slot->second.m.size() != g.numel()) {
            throw ShapeError("optimizer slot for " + items[i].name + " holds " +
                             std::to_string(slot->second.m.size()) + " values, parameter has " +
                             std::to_string(g.numel()));
        }
    }

    state.t_ += 1;
    const double b1 = state.config_.beta1;
    const double b2 = state.config_.beta2;
    const double eps = state.config_.eps;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t_));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t_));

    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& slot = state.slots_[items[i].name];
        if (slot.m.empty() && items[i].tensor.numel() != 0) {
            slot.m.assign(items[i].tensor.numel(), 0.0);
            slot.v.assign(items[i].tensor.numel(), 0.0);
        }
        Tensor param = items[i].tensor;
        std::vector<double>& w = param.values();
        const std::vector<double>& g = *gvals[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            slot.m[k] = b1 * slot.m[k] + (1.0 - b1) * g[k];
            slot.v[k] = b2 * slot.v[k] + (1.0 - b2) * g[k] * g[k];
            const double mhat = slot.m[k] / corr1;
            const double vhat = slot.v[k] / corr2;
            w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

double lr_at(const LrSchedule& schedule, int epoch) {
    if (!(schedule.lr0 > 0.0)) {
        throw ConfigError("lr schedule requires lr0 > 0");
    }
    if (schedule.total_epochs <= 0) {
        throw ConfigError("lr schedule requires total_epochs > 0");
    }
    if (epoch < 0) {
        throw ConfigError("lr_at requires epoch >= 0");
    }
    const int blocks = (schedule.total_epochs + 9) / 10;
    const double frac = 1.0 - static_cast<double>(epoch / 10) / static_cast<double>(blocks);
    return schedule.lr0 * (frac > 0.0 ? frac : 0.0);
}

} // namespace mpct
