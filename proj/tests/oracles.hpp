#pragma once

// Test-only reference implementations. These deliberately avoid the library's
// op layer: plain loops over std::vector, written from the definitions.

#include <cmath>
#include <functional>
#include <vector>

#include "revit/revit.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  std::vector<double> y;
  for (double v : x) y.push_back(std::exp(v - mx) / z);
  return y;
}

/// Standard normal CDF via a series expansion of erf, independent of std::erf.
inline double phi_series(double x) {
  const double z = x / std::sqrt(2.0);
  // erf(z) = 2/sqrt(pi) * sum_n (-1)^n z^(2n+1) / (n! (2n+1))
  double term = z, sum = z;
  for (int n = 1; n < 200; ++n) {
    term *= -z * z / n;
    sum += term / (2 * n + 1);
  }
  const double erf = 2.0 / std::sqrt(M_PI) * sum;
  return 0.5 * (1.0 + erf);
}

template <typename T>
Mat to_mat(const revit::Tensor<T>& t) {
  const std::size_t r = t.extent(t.rank() - 2), c = t.extent(t.rank() - 1);
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.data()[i * c + j];
  return m;
}

/// Straight-line MHSA for one image, X [N, dim], no head-splitting tricks.
/// Returns output rows, and the per-head post-blend scores via `scores_out`.
inline Mat naive_mhsa(const Mat& x, const Mat& wq, const Mat& wk, const Mat& wv, const Mat& wo, std::size_t heads,
                      const std::vector<Mat>* prev_scores, double alpha, std::vector<Mat>* scores_out) {
  const std::size_t N = x.size(), D = wq.size(), d = D / heads;
  Mat q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
  Mat concat(N, std::vector<double>(D, 0.0));
  if (scores_out) scores_out->clear();
  for (std::size_t h = 0; h < heads; ++h) {
    Mat s(N, std::vector<double>(N, 0.0));
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += q[i][h * d + c] * k[j][h * d + c];
        s[i][j] = dot / std::sqrt(static_cast<double>(d));
        if (prev_scores) s[i][j] = alpha * s[i][j] + (1.0 - alpha) * (*prev_scores)[h][i][j];
      }
    if (scores_out) scores_out->push_back(s);
    for (std::size_t i = 0; i < N; ++i) {
      auto a = softmax(s[i]);
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t c = 0; c < d; ++c) concat[i][h * d + c] += a[j] * v[j][h * d + c];
    }
  }
  return matmul(concat, wo);
}

inline Mat naive_layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b, double eps) {
  Mat y = x;
  for (auto& row : y) {
    double mu = 0.0, var = 0.0;
    for (double v : row) mu += v;
    mu /= row.size();
    for (double v : row) var += (v - mu) * (v - mu);
    var /= row.size();
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) / std::sqrt(var + eps) * g[j] + b[j];
  }
  return y;
}

inline double gelu(double x) { return x * phi_series(x); }

/// Triple-loop non-locality over a patch grid: for each query patch, the
/// attention-weighted distance to every key patch from explicit coordinates.
inline double non_locality(const Mat& a, std::size_t grid) {
  const std::size_t n = grid * grid;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ri = static_cast<double>(i / grid), ci = static_cast<double>(i % grid);
    for (std::size_t j = 0; j < n; ++j) {
      const double rj = static_cast<double>(j / grid), cj = static_cast<double>(j % grid);
      total += a[i][j] * std::sqrt((ri - rj) * (ri - rj) + (ci - cj) * (ci - cj));
    }
  }
  return total / static_cast<double>(n);
}

/// Central finite difference of f with respect to one scalar slot.
template <typename T>
double central_difference(const std::function<double()>& f, T& slot, double h) {
  const T orig = slot;
  slot = static_cast<T>(orig + h);
  const double up = f();
  slot = static_cast<T>(orig - h);
  const double down = f();
  slot = orig;
  return (up - down) / (2.0 * h);
}

/// Fourth-order central difference, same step.
template <typename T>
double central_difference4(const std::function<double()>& f, T& slot, double h) {
  const T orig = slot;
  double v[4];
  const double offs[4] = {2 * h, h, -h, -2 * h};
  for (int i = 0; i < 4; ++i) {
    slot = static_cast<T>(orig + offs[i]);
    v[i] = f();
  }
  slot = orig;
  return (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * h);
}

inline Mat random_stochastic(std::size_t n, revit::Rng& rng) {
  Mat a(n, std::vector<double>(n));
  for (auto& row : a) {
    double s = 0.0;
    for (auto& v : row) {
      v = rng.uniform();
      s += v;
    }
    for (auto& v : row) v /= s;
  }
  return a;
}

template <typename T>
revit::Tensor<T> from_mat(const Mat& m) {
  std::vector<T> d;
  for (const auto& r : m)
    for (double v : r) d.push_back(static_cast<T>(v));
  return revit::Tensor<T>(revit::Shape{m.size(), m[0].size()}, std::move(d));
}

template <typename T>
revit::Tensor<T> random_tensor(revit::Shape s, revit::Rng& rng, double lo = -1.0, double hi = 1.0,
                               bool requires_grad = false) {
  revit::Tensor<T> t(std::move(s), T{0}, requires_grad);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace oracle
