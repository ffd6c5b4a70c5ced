#pragma once

#include "oracles.hpp"

namespace gradcheck {

struct Result {
  double max_rel = 0.0;
  double max_abs = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are
/// zero up to rounding from producing meaningless ratios.
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Analytic gradients of loss_fn() w.r.t. every element of `inputs`, compared
/// against central differences with step h. 64-bit runs use the fourth-order
/// stencil so truncation error stays below the tighter tolerance.
template <typename T>
Result check(const std::function<revit::Tensor<T>()>& loss_fn, std::vector<revit::Tensor<T>> inputs, double h,
             double floor) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    revit::Tape<T> tape;
    revit::GradScope<T> scope(tape);
    auto loss = loss_fn();
    revit::backward(loss);
  }
  Result r;
  auto eval = [&] { return static_cast<double>(loss_fn().item()); };
  for (auto& t : inputs) {
    std::vector<T> g(t.grad().begin(), t.grad().end());
    if (g.empty()) g.assign(t.numel(), T{0});
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double num = std::is_same_v<T, double> ? oracle::central_difference4<T>(eval, t.data()[i], h)
                                                    : oracle::central_difference<T>(eval, t.data()[i], h);
      r.max_abs = std::max(r.max_abs, std::abs(num - g[i]));
      r.max_rel = std::max(r.max_rel, relative_error(g[i], num, floor));
      ++r.checked;
    }
  }
  return r;
}

}  // namespace gradcheck
