#pragma once

#include "revit/model.hpp"

namespace revit {

/// Pairwise Euclidean distances between patch positions, in patch units.
struct DistanceMatrix {
  std::size_t grid = 0;
  std::vector<double> delta;  // [grid^2, grid^2] row-major

  std::size_t size() const { return grid * grid; }
  double operator()(std::size_t i, std::size_t j) const { return delta[i * size() + j]; }
  double max() const { return delta.empty() ? 0.0 : *std::max_element(delta.begin(), delta.end()); }
};

inline DistanceMatrix build_distance_matrix(std::size_t grid) {
  if (grid == 0) throw ValidationError("build_distance_matrix: grid must be >= 1");
  DistanceMatrix dm;
  dm.grid = grid;
  const std::size_t n = grid * grid;
  dm.delta.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dr = static_cast<double>(i / grid) - static_cast<double>(j / grid);
      const double dc = static_cast<double>(i % grid) - static_cast<double>(j % grid);
      dm.delta[i * n + j] = std::sqrt(dr * dr + dc * dc);
    }
  return dm;
}

constexpr double kStochasticTolerance = 1e-4;

namespace detail {

template <typename T>
void require_row_stochastic(std::span<const T> a, std::size_t n, const char* what) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (a[i * n + j] < T{0}) throw ValidationError(std::string(what) + ": negative attention weight");
      s += a[i * n + j];
    }
    if (std::abs(s - 1.0) > kStochasticTolerance)
      throw ValidationError(std::string(what) + ": row " + std::to_string(i) + " sums to " +
                            std::to_string(s) + ", not 1");
  }
}

}  // namespace detail

/// Non-locality of a patch-level map A' [Np, Np]: (1/Np) * sum(A' .* delta).
template <typename T>
double non_locality_patches(const Tensor<T>& a, const DistanceMatrix& dm) {
  const std::size_t n = dm.size();
  if (a.rank() != 2 || a.extent(0) != n || a.extent(1) != n)
    throw DimensionError("non_locality: map " + shape_str(a.shape()) + " does not match " +
                         std::to_string(n) + " patches");
  detail::require_row_stochastic(a.data(), n, "non_locality");
  double acc = 0.0;
  auto ad = a.data();
  for (std::size_t k = 0; k < n * n; ++k) acc += static_cast<double>(ad[k]) * dm.delta[k];
  return acc / static_cast<double>(n);
}

/// Drops the class-token row and column of A [N, N] and renormalizes the
/// remaining rows so they are stochastic over patches again.
template <typename T>
Tensor<T> strip_class_token(const Tensor<T>& a) {
  if (a.rank() != 2 || a.extent(0) != a.extent(1) || a.extent(0) < 2)
    throw DimensionError("strip_class_token: expected square map with class token, got " + shape_str(a.shape()));
  const std::size_t n = a.extent(0);
  detail::require_row_stochastic(a.data(), n, "strip_class_token");
  const std::size_t np = n - 1;
  Tensor<T> out(Shape{np, np});
  auto ad = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < np; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < np; ++j) s += ad[(i + 1) * n + j + 1];
    for (std::size_t j = 0; j < np; ++j)
      o[i * np + j] = s > 0.0 ? static_cast<T>(ad[(i + 1) * n + j + 1] / s) : static_cast<T>(1.0 / np);
  }
  return out;
}

/// Non-locality of one head from a full token map A [N, N] (class token at 0).
template <typename T>
double non_locality_head(const Tensor<T>& a, const DistanceMatrix& dm) {
  return non_locality_patches(strip_class_token(a), dm);
}

struct LayerNonLocality {
  std::vector<double> heads;
  double layer = 0.0;
};

/// A [H, N, N] for one layer; layer value is the mean over heads.
template <typename T>
LayerNonLocality non_locality_layer(const Tensor<T>& a, const DistanceMatrix& dm) {
  if (a.rank() != 3) throw DimensionError("non_locality_layer: expected [H, N, N], got " + shape_str(a.shape()));
  LayerNonLocality r;
  const std::size_t H = a.extent(0);
  for (std::size_t h = 0; h < H; ++h)
    r.heads.push_back(non_locality_head(reshape(slice(a, 0, h, 1), Shape{a.extent(1), a.extent(2)}), dm));
  r.layer = std::accumulate(r.heads.begin(), r.heads.end(), 0.0) / static_cast<double>(H);
  return r;
}

/// Globality of the blended map alpha * A_cur + (1 - alpha) * A_prev on
/// patch-level maps. This blends post-softmax maps, which is not what the
/// forward pass does (it blends pre-softmax scores), so it is reported next
/// to the exact value rather than substituted for it.
template <typename T>
double revit_globality_decomposition(const Tensor<T>& a_cur, const Tensor<T>& a_prev, double alpha,
                                     const DistanceMatrix& dm) {
  if (a_cur.shape() != a_prev.shape())
    throw DimensionError("revit_globality_decomposition: map shapes differ");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("revit_globality_decomposition: alpha outside [0, 1]");
  const std::size_t n = dm.size();
  if (a_cur.rank() != 2 || a_cur.extent(0) != n || a_cur.extent(1) != n)
    throw DimensionError("revit_globality_decomposition: maps must be [Np, Np]");
  detail::require_row_stochastic(a_cur.data(), n, "revit_globality_decomposition");
  detail::require_row_stochastic(a_prev.data(), n, "revit_globality_decomposition");
  double acc = 0.0;
  auto c = a_cur.data();
  auto p = a_prev.data();
  for (std::size_t k = 0; k < n * n; ++k)
    acc += (alpha * static_cast<double>(c[k]) + (1.0 - alpha) * static_cast<double>(p[k])) * dm.delta[k];
  return acc / static_cast<double>(n);
}

/// Cosine similarity between rows of X [N, dim]. Zero-norm rows get
/// similarity 0 with everything (including themselves).
template <typename T>
Tensor<double> feature_similarity(const Tensor<T>& x, std::size_t* zero_rows = nullptr) {
  if (x.rank() != 2) throw DimensionError("feature_similarity: expected [N, dim], got " + shape_str(x.shape()));
  const std::size_t n = x.extent(0), d = x.extent(1);
  auto xd = x.data();
  std::vector<double> norm(n);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(xd[i * d + k]) * xd[i * d + k];
    norm[i] = std::sqrt(s);
    if (norm[i] == 0.0) ++zeros;
  }
  if (zero_rows) *zero_rows = zeros;
  Tensor<double> sim(Shape{n, n});
  auto s = sim.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double v = 0.0;
      if (norm[i] > 0.0 && norm[j] > 0.0) {
        if (i == j) {
          v = 1.0;
        } else {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(xd[i * d + k]) * xd[j * d + k];
          v = dot / (norm[i] * norm[j]);
        }
      }
      s[i * n + j] = v;
      s[j * n + i] = v;
    }
  return sim;
}

/// Mean of the off-diagonal entries of a square similarity matrix.
inline double mean_off_diagonal(const Tensor<double>& sim) {
  const std::size_t n = sim.extent(0);
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) s += sim.data()[i * n + j];
  return s / static_cast<double>(n * (n - 1));
}

/// Effective alpha per layer. Empty for plain ViT models.
template <typename T>
std::vector<double> alpha_report(const ModelConfig& cfg, const ModelParams<T>& p) {
  if (!cfg.residual_attention()) return {};
  return p.alpha.values();
}

}  // namespace revit
