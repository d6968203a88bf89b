#include "relpos/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "relpos/errors.hpp"

namespace relpos {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (x.dtype() != DType::f64) throw UsageError("finite_diff_grad requires f64 input");
    Tensor probe = x;
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = f(probe);
        probe[i] = orig - h;
        const double down = f(probe);
        probe[i] = orig;
        out[i] = (up - down) / (2.0 * h);
    }
    return out;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric) {
    require_same_shape(analytic, numeric, "max_relative_error");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.numel(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (std::abs(numeric[i]) + 1e-8));
    return worst;
}

std::vector<GradCheckResult> check_parameter_grads(const std::function<Var(Tape&)>& loss,
                                                   const std::vector<Parameter*>& params, double h) {
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(loss(tape));
    }
    std::vector<GradCheckResult> results;
    for (auto* p : params) {
        const Tensor analytic = p->grad;
        const Tensor saved = p->value;
        auto eval = [&](const Tensor& v) {
            p->value = v;
            Tape tape;
            return loss(tape).value().item();
        };
        const Tensor numeric = finite_diff_grad(eval, saved, h);
        p->value = saved;
        results.push_back({p->name, max_relative_error(analytic, numeric), analytic.numel()});
    }
    return results;
}

}  // namespace relpos
