#pragma once

#include <numbers>

#include "revit/model.hpp"

namespace revit {

/// Adam moments and hyperparameters, one (m, v) pair per named parameter.
template <typename T>
struct OptimizerState {
  std::vector<std::string> names;
  std::vector<Tensor<T>> m, v;
  std::vector<bool> decay;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled decay applies to matrices and embeddings, not to biases, norm
/// scales or the alpha gate.
inline bool decays(const std::string& name, const Shape& shape) {
  return shape.size() >= 2 && name != "alpha.raw";
}

template <typename T>
OptimizerState<T> make_optimizer(const NamedTensors<T>& params, double beta1, double beta2, double eps,
                                 double weight_decay) {
  OptimizerState<T> s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  s.weight_decay = weight_decay;
  for (const auto& [name, t] : params) {
    s.names.push_back(name);
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
    s.decay.push_back(decays(name, t.shape()));
  }
  return s;
}

/// One Adam update with decoupled weight decay, reading each parameter's
/// gradient buffer (absent buffer = zero gradient).
template <typename T>
void adam_step(const NamedTensors<T>& params, OptimizerState<T>& s, double lr) {
  if (params.size() != s.names.size()) throw ValidationError("adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    if (name != s.names[i] || p.shape() != s.m[i].shape())
      throw ValidationError("adam_step: parameter '" + name + "' does not match optimizer state");
    if (p.has_grad())
      for (T g : p.grad())
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter '" + name + "'");
  }
  ++s.t;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i].second;
    auto pd = p.data();
    auto g = p.grad();
    auto md = s.m[i].data();
    auto vd = s.v[i].data();
    const double wd = s.decay[i] ? s.weight_decay : 0.0;
    for (std::size_t k = 0; k < pd.size(); ++k) {
      const double gk = g.empty() ? 0.0 : static_cast<double>(g[k]);
      const double m = s.beta1 * md[k] + (1.0 - s.beta1) * gk;
      const double v = s.beta2 * vd[k] + (1.0 - s.beta2) * gk * gk;
      md[k] = static_cast<T>(m);
      vd[k] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      const double x = pd[k];
      pd[k] = static_cast<T>(x - lr * mhat / (std::sqrt(vhat) + s.eps) - lr * wd * x);
    }
  }
}

/// Linear warmup from 0 to base_lr over `warmup` steps, then cosine decay to 0
/// at `total`.
inline double lr_at(std::size_t step, std::size_t total, std::size_t warmup, double base_lr) {
  if (warmup > 0 && step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return 0.0;
  const double progress =
      std::clamp(static_cast<double>(step - warmup) / static_cast<double>(total - warmup), 0.0, 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double grad_global_norm(const NamedTensors<T>& params) {
  double s = 0.0;
  for (const auto& [name, p] : params)
    for (T g : p.grad()) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const NamedTensors<T>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ValidationError("clip_grad_norm: max_norm must be positive");
  const double norm = grad_global_norm(params);
  if (norm > max_norm) {
    const double f = max_norm / (norm + 1e-12);
    for (auto [name, p] : params)
      for (T& g : p.grad()) g = static_cast<T>(g * f);
  }
  return norm;
}

}  // namespace revit
