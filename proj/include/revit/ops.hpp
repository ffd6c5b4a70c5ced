#pragma once

#include <cmath>
#include <limits>

#include "revit/tensor.hpp"

// Differentiable operations. Every op computes its forward result eagerly and,
// when a tape is active and some input requires a gradient, records a
// backward rule that accumulates into the inputs' gradient buffers.
//
// Reductions accumulate in double regardless of the storage type.

namespace revit {

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::current()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
void record(Tensor<T>& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  Tape<T>::current()->record(out, std::move(fn));
}

/// Gradient buffer of an input node, or null when it does not need one.
template <typename T>
T* grad_of(const std::shared_ptr<TensorNode<T>>& n) {
  if (!n->requires_grad) return nullptr;
  if (n->grad.empty()) n->grad.assign(n->data.size(), T{0});
  return n->grad.data();
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in result");
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcastable");
    out[i] = std::max(ea, eb);
  }
  return out;
}

/// For each flat index of `out`, the flat index of `in` it reads under
/// right-aligned broadcasting. Empty result means the identity mapping.
inline std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t r = out.size();
  Shape padded(r, 1);
  std::copy(in.begin(), in.end(), padded.begin() + static_cast<std::ptrdiff_t>(r - in.size()));
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = padded[i] == 1 ? 0 : s;
    s *= padded[i];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    map[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += in_stride[d];
      if (idx[d] < out[d]) break;
      off -= in_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

inline std::size_t at_map(const std::vector<std::size_t>& m, std::size_t i) {
  return m.empty() ? i : m[i];
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd f, DA da,
                 DB db) {
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  auto ma = broadcast_map(a.shape(), os);
  auto mb = broadcast_map(b.shape(), os);
  Tensor<T> out(os);
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(ad[at_map(ma, i)], bd[at_map(mb, i)]);
  check_finite(out, name);
  if (should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    record(out, [an, bn, on, ma = std::move(ma), mb = std::move(mb), da, db] {
      const auto& g = on->grad;
      T* ga = grad_of(an);
      T* gb = grad_of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T x = an->data[at_map(ma, i)];
        const T y = bn->data[at_map(mb, i)];
        if (ga) ga[at_map(ma, i)] += da(x, y) * g[i];
        if (gb) gb[at_map(mb, i)] += db(x, y) * g[i];
      }
    });
  }
  return out;
}

/// y = f(x) elementwise with dy/dx = df(x, y).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* name, Fwd f, Deriv df) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(xd[i]);
  check_finite(out, name);
  if (should_record({&x})) {
    auto xn = x.node(), on = out.node();
    record(out, [xn, on, df] {
      T* gx = grad_of(xn);
      const auto& g = on->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += df(xn->data[i], on->data[i]) * g[i];
    });
  }
  return out;
}

// Row-major kernels; each accumulates into C. Partitioned over output rows.

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  parallel_for(M, K * N, [=](std::size_t r0, std::size_t r1) {
    std::vector<double> acc(N);
    for (std::size_t i = r0; i < r1; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* a = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double av = a[k];
        if (av == 0.0) continue;
        const T* b = B + k * N;
        for (std::size_t j = 0; j < N; ++j) acc[j] += av * static_cast<double>(b[j]);
      }
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += static_cast<T>(acc[j]);
    }
  });
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  parallel_for(M, K * N, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const T* a = A + i * K;
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) {
        const T* b = B + j * K;
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += static_cast<double>(a[k]) * b[k];
        c[j] += static_cast<T>(s);
      }
    }
  });
}

/// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  parallel_for(K, M * N, [=](std::size_t r0, std::size_t r1) {
    std::vector<double> acc(N);
    for (std::size_t k = r0; k < r1; ++k) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t m = 0; m < M; ++m) {
        const double av = A[m * K + k];
        if (av == 0.0) continue;
        const T* b = B + m * N;
        for (std::size_t j = 0; j < N; ++j) acc[j] += av * static_cast<double>(b[j]);
      }
      T* c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += static_cast<T>(acc[j]);
    }
  });
}

/// Flat offsets of `in` visited in the order of the permuted output.
inline std::vector<std::size_t> permute_map(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t r = in.size();
  std::vector<std::size_t> stride(r);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    stride[i] = s;
    s *= in[i];
  }
  Shape out(r);
  std::vector<std::size_t> ostride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[axes[i]];
    ostride[i] = stride[axes[i]];
  }
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    map[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += ostride[d];
      if (idx[d] < out[d]) break;
      off -= ostride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

/// y = scale * x + shift
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  return detail::unary(
      x, "affine", [=](T v) { return scale * v + shift; }, [=](T, T) { return scale; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return affine(x, s, T{0});
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, "sigmoid", [](T v) { return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); },
      [](T, T y) { return y * (T{1} - y); });
}

/// Exact-erf GELU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary(
      x, "gelu",
      [](T v) {
        const double d = v;
        return static_cast<T>(0.5 * d * (1.0 + std::erf(d * kInvSqrt2)));
      },
      [](T v, T) {
        const double d = v;
        const double cdf = 0.5 * (1.0 + std::erf(d * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * d * d);
        return static_cast<T>(cdf + d * pdf);
      });
}

/// Matrix product over the last two axes. Leading (batch) axes broadcast.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const std::size_t M = a.extent(a.rank() - 2);
  const std::size_t K = a.extent(a.rank() - 1);
  const std::size_t N = b.extent(b.rank() - 1);
  if (b.extent(b.rank() - 2) != K)
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));

  if (b.rank() == 2) {
    // Shared right operand: fold every leading axis of `a` into the rows.
    const std::size_t rows = a.numel() / K;
    Shape os(a.shape().begin(), a.shape().end() - 1);
    os.push_back(N);
    Tensor<T> out(os);
    detail::gemm_nn(rows, K, N, a.data().data(), b.data().data(), out.data().data());
    detail::check_finite(out, "matmul");
    if (detail::should_record({&a, &b})) {
      auto an = a.node(), bn = b.node(), on = out.node();
      detail::record(out, [an, bn, on, rows, K, N] {
        const T* g = on->grad.data();
        if (T* ga = detail::grad_of(an)) detail::gemm_nt(rows, N, K, g, bn->data.data(), ga);
        if (T* gb = detail::grad_of(bn)) detail::gemm_tn(rows, K, N, an->data.data(), g, gb);
      });
    }
    return out;
  }

  Shape ab(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  Shape ob = detail::broadcast_shape(ab, bb, "matmul");
  auto ma = detail::broadcast_map(ab, ob);
  auto mb = detail::broadcast_map(bb, ob);
  const std::size_t batches = shape_numel(ob);
  Shape os = ob;
  os.push_back(M);
  os.push_back(N);
  Tensor<T> out(os);
  {
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    for (std::size_t i = 0; i < batches; ++i)
      detail::gemm_nn(M, K, N, ad + detail::at_map(ma, i) * M * K,
                      bd + detail::at_map(mb, i) * K * N, od + i * M * N);
  }
  detail::check_finite(out, "matmul");
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record(out, [an, bn, on, ma = std::move(ma), mb = std::move(mb), batches, M, K, N] {
      const T* g = on->grad.data();
      T* ga = detail::grad_of(an);
      T* gb = detail::grad_of(bn);
      for (std::size_t i = 0; i < batches; ++i) {
        const std::size_t ia = detail::at_map(ma, i) * M * K;
        const std::size_t ib = detail::at_map(mb, i) * K * N;
        if (ga) detail::gemm_nt(M, N, K, g + i * M * N, bn->data.data() + ib, ga + ia);
        if (gb) detail::gemm_tn(M, K, N, an->data.data() + ia, g + i * M * N, gb + ib);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.vec());
  if (detail::should_record({&x})) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on] {
      T* gx = detail::grad_of(xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) gx[i] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  if (axes.size() != x.rank())
    throw DimensionError("permute: axis count does not match rank of " + shape_str(x.shape()));
  std::vector<bool> seen(axes.size(), false);
  Shape os(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= axes.size() || seen[axes[i]]) throw DimensionError("permute: invalid axes");
    seen[axes[i]] = true;
    os[i] = x.extent(axes[i]);
  }
  auto map = detail::permute_map(x.shape(), axes);
  Tensor<T> out(os);
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[map[i]];
  if (detail::should_record({&x})) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on, map = std::move(map)] {
      T* gx = detail::grad_of(xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) gx[map[i]] += on->grad[i];
    });
  }
  return out;
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last: rank < 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

/// Contiguous range [start, start+len) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.rank() || len == 0 || start + len > x.extent(axis))
    throw DimensionError("slice: range out of bounds for " + shape_str(x.shape()));
  const std::size_t outer = shape_numel(Shape(x.shape().begin(), x.shape().begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(x.shape().begin() + static_cast<std::ptrdiff_t>(axis) + 1, x.shape().end()));
  const std::size_t ext = x.extent(axis);
  Shape os = x.shape();
  os[axis] = len;
  Tensor<T> out(os);
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t p = 0; p < outer; ++p)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((p * ext + start) * inner), len * inner,
                o.begin() + static_cast<std::ptrdiff_t>(p * len * inner));
  if (detail::should_record({&x})) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on, outer, inner, ext, start, len] {
      T* gx = detail::grad_of(xn);
      const T* g = on->grad.data();
      for (std::size_t p = 0; p < outer; ++p)
        for (std::size_t k = 0; k < len * inner; ++k)
          gx[(p * ext + start) * inner + k] += g[p * len * inner + k];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank())
    throw DimensionError("concat: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis && a.extent(i) != b.extent(i))
      throw DimensionError("concat: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t outer = shape_numel(Shape(a.shape().begin(), a.shape().begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(a.shape().begin() + static_cast<std::ptrdiff_t>(axis) + 1, a.shape().end()));
  const std::size_t ea = a.extent(axis) * inner;
  const std::size_t eb = b.extent(axis) * inner;
  Shape os = a.shape();
  os[axis] += b.extent(axis);
  Tensor<T> out(os);
  T* o = out.data().data();
  for (std::size_t p = 0; p < outer; ++p) {
    std::copy_n(a.data().data() + p * ea, ea, o + p * (ea + eb));
    std::copy_n(b.data().data() + p * eb, eb, o + p * (ea + eb) + ea);
  }
  if (detail::should_record({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::record(out, [an, bn, on, outer, ea, eb] {
      const T* g = on->grad.data();
      T* ga = detail::grad_of(an);
      T* gb = detail::grad_of(bn);
      for (std::size_t p = 0; p < outer; ++p) {
        if (ga)
          for (std::size_t k = 0; k < ea; ++k) ga[p * ea + k] += g[p * (ea + eb) + k];
        if (gb)
          for (std::size_t k = 0; k < eb; ++k) gb[p * eb + k] += g[p * (ea + eb) + ea + k];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  Shape check = detail::broadcast_shape(x.shape(), shape, "broadcast_to");
  if (check != shape)
    throw DimensionError("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " + shape_str(shape));
  auto map = detail::broadcast_map(x.shape(), shape);
  Tensor<T> out(shape);
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[detail::at_map(map, i)];
  if (detail::should_record({&x})) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on, map = std::move(map)] {
      T* gx = detail::grad_of(xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) gx[detail::at_map(map, i)] += on->grad[i];
    });
  }
  return out;
}

/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += v;
  Tensor<T> out(Shape{1}, static_cast<T>(s));
  detail::check_finite(out, "sum");
  if (detail::should_record({&x})) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on] {
      T* gx = detail::grad_of(xn);
      const T g = on->grad[0];
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

/// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("softmax_lastdim: rank 0");
  const std::size_t n = x.extent(x.rank() - 1);
  const std::size_t rows = x.numel() / n;
  Tensor<T> out(x.shape());
  const T* xd = x.data().data();
  T* o = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd + r * n;
    T* orow = o + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(xr[j]) - mx);
    for (std::size_t j = 0; j < n; ++j)
      orow[j] = static_cast<T>(std::exp(static_cast<double>(xr[j]) - mx) / z);
  }
  detail::check_finite(out, "softmax_lastdim");
  if (detail::should_record({&x})) {
    auto xn = x.node(), on = out.node();
    detail::record(out, [xn, on, n, rows] {
      T* gx = detail::grad_of(xn);
      const T* y = on->data.data();
      const T* g = on->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[r * n + j]) * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[r * n + j] += static_cast<T>(y[r * n + j] * (g[r * n + j] - dot));
      }
    });
  }
  return out;
}

/// Per-row normalization over the last axis followed by gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  const std::size_t n = x.extent(x.rank() - 1);
  if (gamma.numel() != n || beta.numel() != n)
    throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match last extent of " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / n;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
  T* o = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double is = var + eps > 0.0 ? 1.0 / std::sqrt(var + eps) : 0.0;
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * n + j] = static_cast<T>(h);
      o[r * n + j] = static_cast<T>(h * gd[j] + bd[j]);
    }
  }
  detail::check_finite(out, "layer_norm");
  if (detail::should_record({&x, &gamma, &beta})) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    detail::record(out, [xn, gn, bn, on, xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows] {
      const T* g = on->grad.data();
      T* gx = detail::grad_of(xn);
      T* gg = detail::grad_of(gn);
      T* gb = detail::grad_of(bn);
      const T* gamma_d = gn->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g + r * n;
        const T* hr = xhat.data() + r * n;
        if (gg)
          for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * hr[j];
        if (gb)
          for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
        if (gx) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = static_cast<double>(gr[j]) * gamma_d[j];
            m1 += dh;
            m2 += dh * hr[j];
          }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = static_cast<double>(gr[j]) * gamma_d[j];
            gx[r * n + j] += static_cast<T>(inv_std[r] * (dh - m1 - hr[j] * m2));
          }
        }
      }
    });
  }
  return out;
}

/// Mean negative log-likelihood of `labels` under softmax(logits), logits [B, C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2)
    throw DimensionError("cross_entropy: logits must be [B, C], got " + shape_str(logits.shape()));
  const std::size_t B = logits.extent(0);
  const std::size_t C = logits.extent(1);
  if (labels.size() != B)
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(B));
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= C)
      throw ValidationError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                            std::to_string(C) + ")");
  std::vector<T> probs(B * C);
  double loss = 0.0;
  const T* x = logits.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    const T* xr = x + b * C;
    const double mx = *std::max_element(xr, xr + C);
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j) z += std::exp(xr[j] - mx);
    const double lz = std::log(z) + mx;
    loss += lz - xr[labels[b]];
    for (std::size_t j = 0; j < C; ++j) probs[b * C + j] = static_cast<T>(std::exp(xr[j] - lz));
  }
  Tensor<T> out(Shape{1}, static_cast<T>(loss / static_cast<double>(B)));
  detail::check_finite(out, "cross_entropy");
  if (detail::should_record({&logits})) {
    auto ln = logits.node(), on = out.node();
    std::vector<int> lab(labels.begin(), labels.end());
    detail::record(out, [ln, on, probs = std::move(probs), lab = std::move(lab), B, C] {
      T* gx = detail::grad_of(ln);
      const double g = static_cast<double>(on->grad[0]) / static_cast<double>(B);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < C; ++j) {
          const double onehot = static_cast<std::size_t>(lab[b]) == j ? 1.0 : 0.0;
          gx[b * C + j] += static_cast<T>((probs[b * C + j] - onehot) * g);
        }
    });
  }
  return out;
}

}  // namespace revit
