#include "siaedit/numcore/grad_check.hpp"

#include "siaedit/errors.hpp"

#include <algorithm>
#include <cmath>

namespace siaedit::num {

namespace {

void check_step(double step) {
  if (!(step > 0.0 && step <= 1e-2)) throw ContractError("grad_check: step must lie in (0, 1e-2]");
}

double scalar_of(const Tensor& y) {
  if (y.numel() != 1) throw ContractError("grad_check: function output has shape " + shape_string(y.shape()));
  return y.item();
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor p = x.clone(true);
  std::vector<Tensor> params{p};
  auto wrapped = [&]() { return f(p); };
  return grad_check_params(wrapped, params, step).max_relative_error;
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params, double step) {
  check_step(step);
  std::vector<Values> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    for (auto& p : params) p.zero_grad();
    Tensor y = f();
    scalar_of(y);
    tape.backward(y);
    for (auto& p : params) analytic.push_back(p.has_grad() ? p.grad() : Values::Zero(p.numel()));
  }

  GradCheckReport report;
  NoGradScope no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Values& v = params[t].mutable_values();
    for (Index i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + step;
      const double up = scalar_of(f());
      v[i] = orig - step;
      const double down = scalar_of(f());
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[t][i], numeric);
      ++report.components_checked;
      if (err > report.max_relative_error || std::isnan(err)) {
        report.max_relative_error = std::isnan(err) ? INFINITY : err;
        report.worst_tensor = t;
        report.worst_component = i;
      }
    }
  }
  return report;
}

}  // namespace siaedit::num
