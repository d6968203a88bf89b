#pragma once

#include <functional>
#include <string>
#include <vector>

#include "relpos/autograd.hpp"
#include "relpos/tensor.hpp"

namespace relpos {

/// Central-difference gradient of a scalar function of one tensor:
/// (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate. Requires f64.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-8)
double max_relative_error(const Tensor& analytic, const Tensor& numeric);

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords = 0;
};

/// Compares tape gradients against central differences for each listed
/// parameter. `loss` must build a fresh tape-backed scalar from the current
/// parameter values; it is called once for the analytic pass and 2x per
/// coordinate for the numeric pass.
std::vector<GradCheckResult> check_parameter_grads(const std::function<Var(Tape&)>& loss,
                                                   const std::vector<Parameter*>& params, double h = 1e-5);

}  // namespace relpos
