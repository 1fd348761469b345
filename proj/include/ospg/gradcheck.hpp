#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "ospg/tensor.hpp"

namespace ospg::num {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
  std::size_t coordinates = 0;
  bool passed = true;
};

// Relative error with a floor on the denominator so that coordinates whose
// true derivative is zero are compared on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares the reverse-mode gradient of the scalar `f` with respect to `x`
// against central differences. `f` must rebuild its graph from the current
// values of `x` on every call. Values of `x` are restored afterwards.
template <class T>
GradCheckReport finite_diff_check(const std::function<Tensor<T>()>& f, Tensor<T> x, double h, double tol) {
  GradCheckReport report;
  const bool was_tracked = x.requires_grad();
  x.set_requires_grad(true);
  x.clear_grad();
  f().backward();
  std::vector<T> analytic(x.size(), T(0));
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
  x.clear_grad();

  NoGradGuard no_grad;
  auto values = x.data_mut();
  report.coordinates = values.size();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = static_cast<T>(saved + h);
    const double plus = f().item();
    values[i] = static_cast<T>(saved - h);
    const double minus = f().item();
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double err = relative_error(analytic[i], numeric);
    if (i == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic = analytic[i];
      report.numeric = numeric;
    }
  }
  x.set_requires_grad(was_tracked);
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace ospg::num
