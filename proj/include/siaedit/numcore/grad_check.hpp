#pragma once

#include "siaedit/numcore/tensor.hpp"

#include <functional>
#include <span>

namespace siaedit::num {

/// Worst component-wise relative error between the tape gradient of a scalar
/// function and central differences (f(x+h) - f(x-h)) / 2h. The relative error
/// uses max(|analytic|, |numeric|, 1e-8) as denominator.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step = 1e-5);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t components_checked = 0;
  std::size_t worst_tensor = 0;
  Index worst_component = 0;
};

/// Same check over a set of parameter leaves, perturbed in place and restored.
/// `f` must rebuild its graph from the current parameter values on every call.
GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  double step = 1e-5);

}  // namespace siaedit::num
