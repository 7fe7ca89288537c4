#pragma once

#include <functional>
#include <string>

#include "mpct/tensor.hpp"

namespace mpct {

struct GradCheckReport {
    bool ok = true;
    double max_err = 0.0; // worst relative mismatch observed
    std::string worst_param;
    std::size_t worst_index = 0;
    int checked = 0;
};

// Compares reverse-pass gradients of a scalar loss against central finite
// differences at sampled coordinates; samples_per_param <= 0 checks every
// coordinate. make_loss must rebuild the loss from the parameters' current
// values each call; during the analytic pass it receives a tape with every
// parameter watched. Mismatches retry with smaller steps, so a coordinate
// sitting within one step of a kink is re-measured instead of reported as a
// failure.
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& make_loss, const ParamSet& params,
                           Rng& rng, int samples_per_param, double rel_tol);

} // namespace mpct
