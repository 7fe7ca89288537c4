#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpct/tensor.hpp"

namespace mpct {

// Adam hyperparameters. beta1 = 0.5 instead of the usual 0.9: high momentum
// destabilizes adversarial training, where the gradient field changes as the
// opponent moves.
struct AdamConfig {
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter first/second moment accumulators plus the shared step counter.
// Slots are created lazily on the first step that sees a parameter; the step
// counter advances once per applied step, never per parameter.
class OptimizerState {
  public:
    explicit OptimizerState(AdamConfig config = {});

    const AdamConfig& config() const { return config_; }
    std::int64_t step_count() const { return t_; }

    bool has(const std::string& name) const;
    const std::vector<double>& first_moment(const std::string& name) const;
    const std::vector<double>& second_moment(const std::string& name) const;

  private:
    friend void adam_step(OptimizerState& state, const ParamSet& params, const Gradients& grads,
                          double lr);

    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };

    AdamConfig config_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, Slot> slots_;
};

// One in-place bias-corrected Adam update over every parameter in `params`,
// reading gradients from `grads` by name. All gradients are checked for
// NaN/Inf before anything is written, so a failed step leaves both the
// parameters and the optimizer state untouched (NumericError names the
// offending parameter). Missing gradients raise ConfigError, mismatched
// accumulator sizes ShapeError, lr <= 0 ConfigError.
void adam_step(OptimizerState& state, const ParamSet& params, const Gradients& grads, double lr);

// Epoch-granular decay: the rate is constant within each 10-epoch block and
// drops linearly across blocks, lr(e) = lr0 * max(0, 1 - floor(e/10)/B) with
// B = ceil(total_epochs/10). The first block runs at lr0; the rate reaches
// exactly zero at the first block boundary at or past the final epoch, so a
// run whose length is a multiple of ten ends just as the rate hits zero.
struct LrSchedule {
    double lr0 = 1e-4;
    int total_epochs = 50;
};

double lr_at(const LrSchedule& schedule, int epoch);

} // namespace mpct
