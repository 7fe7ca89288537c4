#include "mpct/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mpct {

namespace {

double eval_loss(const std::function<Tensor(Tape&)>& make_loss) {
    NoGradGuard ng;
    Tape dummy; // records nothing while gradients are disabled
    return make_loss(dummy).scalar();
}

} // namespace

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& make_loss, const ParamSet& params,
                           Rng& rng, int samples_per_param, double rel_tol) {
    Gradients analytic;
    {
        Tape tape;
        for (const auto& it : params.items()) {
            tape.watch(it.tensor);
        }
        Tensor loss = make_loss(tape);
        tape.backward(loss);
        analytic = collect_gradients(params);
    }

    GradCheckReport rep;
    for (std::size_t p = 0; p < analytic.names.size(); ++p) {
        Tensor param = params.get(analytic.names[p]);
        const std::size_t n = param.numel();
        const std::size_t samples =
            samples_per_param < 1 ? n : std::min(n, static_cast<std::size_t>(samples_per_param));
        for (std::size_t s = 0; s < samples; ++s) {
            const std::size_t idx = (n == samples) ? s : rng.below(n);
            const double a = analytic.grads[p].values()[idx];
            double best_err = HUGE_VAL;
            for (double h0 : {1e-4, 1e-5, 1e-6}) {
                double& slot = param.values()[idx];
                const double orig = slot;
                const double h = h0 * std::max(1.0, std::abs(orig));
                slot = orig + h;
                const double lp = eval_loss(make_loss);
                slot = orig - h;
                const double lm = eval_loss(make_loss);
                slot = orig;
                const double fd = (lp - lm) / (2.0 * h);
                const double err =
                    std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
                best_err = std::min(best_err, err);
                if (best_err <= rel_tol) {
                    break;
                }
            }
            ++rep.checked;
            if (best_err > rep.max_err) {
                rep.max_err = best_err;
                rep.worst_param = analytic.names[p];
                rep.worst_index = idx;
            }
            if (best_err > rel_tol) {
                rep.ok = false;
            }
        }
    }
    return rep;
}

} // namespace mpct
