#pragma once

#include <optional>
#include <string>

#include "revit/ops.hpp"

namespace revit {

enum class AlphaKind { shared, per_layer, fixed };

/// How the residual-attention gate is parameterized.
struct AlphaMode {
  AlphaKind kind = AlphaKind::shared;
  double value = 0.5;  // used by `fixed` only

  static AlphaMode parse(const std::string& s) {
    if (s == "shared") return {AlphaKind::shared, 0.5};
    if (s == "per_layer" || s == "per-layer") return {AlphaKind::per_layer, 0.5};
    if (s.rfind("fixed:", 0) == 0 || s.rfind("fixed(", 0) == 0) {
      std::string num = s.substr(6);
      if (!num.empty() && num.back() == ')') num.pop_back();
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(num, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != num.size())
        throw ValidationError("alpha mode '" + s + "': bad fixed value");
      if (!(v >= 0.0 && v <= 1.0))
        throw ValidationError("alpha mode '" + s + "': fixed value must lie in [0, 1]");
      return {AlphaKind::fixed, v};
    }
    throw ValidationError("unknown alpha mode '" + s + "' (expected shared, per_layer or fixed:<v>)");
  }

  std::string str() const {
    switch (kind) {
      case AlphaKind::shared: return "shared";
      case AlphaKind::per_layer: return "per_layer";
      case AlphaKind::fixed: {
        std::ostringstream os;
        os.precision(17);
        os << "fixed:" << value;
        return os.str();
      }
    }
    return "shared";
  }

  bool operator==(const AlphaMode&) const = default;
};

template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;  // each [dim, dim], applied as X * W
  std::size_t heads = 1;

  std::size_t dim() const { return wq.extent(0); }
  std::size_t head_dim() const { return dim() / heads; }

  void validate() const {
    if (heads == 0) throw ValidationError("attention: heads must be positive");
    for (const auto* w : {&wq, &wk, &wv, &wo}) {
      if (w->rank() != 2 || w->extent(0) != w->extent(1) || w->extent(0) != wq.extent(0))
        throw DimensionError("attention: projection weights must all be [dim, dim], got " +
                             shape_str(w->shape()));
      if (!w->all_finite()) throw ValidationError("attention: non-finite weight");
    }
    if (dim() % heads != 0)
      throw ValidationError("attention: dim " + std::to_string(dim()) + " not divisible by " +
                            std::to_string(heads) + " heads");
  }
};

/// Post-residual pre-softmax scores of one layer, handed to the next.
template <typename T>
struct ScoreState {
  Tensor<T> scores;  // [..., H, N, N]
  std::size_t layer_index = 0;
};

/// Learnable (or fixed) gate weighting current against accumulated scores.
/// Effective value is logistic(raw), so it always lies in (0, 1).
template <typename T>
class AlphaGate {
 public:
  AlphaGate() = default;

  AlphaGate(AlphaMode mode, std::size_t depth) : mode_(mode), depth_(depth) {
    if (mode.kind == AlphaKind::shared) raw_ = Tensor<T>(Shape{1}, T{0}, true);
    if (mode.kind == AlphaKind::per_layer) raw_ = Tensor<T>(Shape{depth}, T{0}, true);
  }

  const AlphaMode& mode() const { return mode_; }
  bool trainable() const { return raw_.defined(); }

  /// Raw parameter; undefined in fixed mode.
  Tensor<T>& raw() { return raw_; }
  const Tensor<T>& raw() const { return raw_; }

  /// Differentiable effective alpha for `layer`, shape [1].
  Tensor<T> effective(std::size_t layer) const {
    switch (mode_.kind) {
      case AlphaKind::fixed: return Tensor<T>::scalar(static_cast<T>(mode_.value));
      case AlphaKind::shared: return sigmoid(raw_);
      case AlphaKind::per_layer: return sigmoid(slice(raw_, 0, layer, 1));
    }
    return Tensor<T>::scalar(T{1});
  }

  double value(std::size_t layer) const {
    switch (mode_.kind) {
      case AlphaKind::fixed: return mode_.value;
      case AlphaKind::shared: return 1.0 / (1.0 + std::exp(-static_cast<double>(raw_.data()[0])));
      case AlphaKind::per_layer:
        return 1.0 / (1.0 + std::exp(-static_cast<double>(raw_.data()[layer])));
    }
    return 1.0;
  }

  std::vector<double> values() const {
    std::vector<double> v(depth_);
    for (std::size_t l = 0; l < depth_; ++l) v[l] = value(l);
    return v;
  }

 private:
  AlphaMode mode_;
  std::size_t depth_ = 0;
  Tensor<T> raw_;
};

/// S = Q K^T / sqrt(d) per head. Q, K: [..., N, d].
template <typename T>
Tensor<T> raw_scores(const Tensor<T>& q, const Tensor<T>& k) {
  if (q.shape() != k.shape())
    throw DimensionError("raw_scores: Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()) +
                         " differ");
  const double d = static_cast<double>(q.extent(q.rank() - 1));
  return scale(matmul(q, transpose_last(k)), static_cast<T>(1.0 / std::sqrt(d)));
}

/// Layer 0 keeps its own scores; later layers blend with the previous state:
/// alpha * S_cur + (1 - alpha) * S_prev.
template <typename T>
Tensor<T> residual_scores(const Tensor<T>& current, const ScoreState<T>* prev, std::size_t layer,
                          const Tensor<T>& alpha) {
  if (layer == 0) return current;
  if (!prev || !prev->scores.defined())
    throw ContractError("residual_scores: layer " + std::to_string(layer) +
                        " requires the previous layer's score state");
  if (prev->scores.shape() != current.shape())
    throw DimensionError("residual_scores: previous scores " + shape_str(prev->scores.shape()) +
                         " do not match current " + shape_str(current.shape()));
  return add(mul(current, alpha), mul(prev->scores, affine(alpha, T{-1}, T{1})));
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& scores) {
  return softmax_lastdim(scores);
}

/// Per-head A V. A: [..., N, N], V: [..., N, d].
template <typename T>
Tensor<T> attend(const Tensor<T>& a, const Tensor<T>& v) {
  if (a.rank() != v.rank() || a.extent(a.rank() - 1) != v.extent(v.rank() - 2) ||
      a.extent(a.rank() - 1) != a.extent(a.rank() - 2))
    throw DimensionError("attend: weights " + shape_str(a.shape()) + " incompatible with values " +
                         shape_str(v.shape()));
  return matmul(a, v);
}

/// [B, N, dim] -> [B, H, N, dim/H]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t B = x.extent(0), N = x.extent(1), D = x.extent(2);
  return permute(reshape(x, Shape{B, N, heads, D / heads}), {0, 2, 1, 3});
}

/// [B, H, N, d] -> [B, N, H*d]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const std::size_t B = x.extent(0), H = x.extent(1), N = x.extent(2), d = x.extent(3);
  return reshape(permute(x, {0, 2, 1, 3}), Shape{B, N, H * d});
}

template <typename T>
struct MhsaOutput {
  Tensor<T> out;         // [B, N, dim]
  ScoreState<T> state;   // scores after the residual blend, [B, H, N, N]
  Tensor<T> weights;     // softmax of state.scores
};

/// Multi-head self-attention over X: [B, N, dim]. With a null gate the layer
/// is a plain MHSA and `prev` is ignored.
template <typename T>
MhsaOutput<T> mhsa_forward(const Tensor<T>& x, const AttentionParams<T>& p, const ScoreState<T>* prev,
                           const AlphaGate<T>* gate, std::size_t layer) {
  if (x.rank() != 3 || x.extent(2) != p.dim())
    throw DimensionError("mhsa_forward: input " + shape_str(x.shape()) + " does not match dim " +
                         std::to_string(p.dim()));
  auto q = split_heads(matmul(x, p.wq), p.heads);
  auto k = split_heads(matmul(x, p.wk), p.heads);
  auto v = split_heads(matmul(x, p.wv), p.heads);
  auto s = raw_scores(q, k);
  if (gate) s = residual_scores(s, prev, layer, gate->effective(layer));
  auto a = attention_weights(s);
  auto out = matmul(merge_heads(attend(a, v)), p.wo);
  return {out, ScoreState<T>{s, layer}, a};
}

}  // namespace revit
