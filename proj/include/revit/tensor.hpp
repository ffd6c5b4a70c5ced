#pragma once

#include <initializer_list>
#include <memory>
#include <span>
#include <utility>

#include "revit/common.hpp"

namespace revit {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, mirroring how
/// parameters are referenced from both the model and the optimizer. Use
/// clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    check_extents(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    check_extents(shape);
    if (data.size() != shape_numel(shape))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T{1}); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  /// Builds a rank-2 tensor from nested rows.
  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    std::vector<T> d;
    std::size_t cols = 0;
    for (auto r : rows) {
      if (cols == 0) cols = r.size();
      if (r.size() != cols) throw DimensionError("ragged rows");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(d));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() & { return node_->data; }
  std::span<const T> data() const& { return node_->data; }
  std::span<T> data() && = delete;  // would dangle once the handle is gone
  std::vector<T>& vec() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }

  /// Gradient buffer, allocated (zero-filled) on first use.
  std::vector<T>& grad_buffer() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T{0});
    return node_->grad;
  }

  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  T& at(std::initializer_list<std::size_t> idx) { return node_->data[offset(idx)]; }
  T at(std::initializer_list<std::size_t> idx) const { return node_->data[offset(idx)]; }

  /// Independent copy of the values; no gradient, not tracked.
  Tensor clone() const { return Tensor(shape(), node_->data); }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

  bool all_finite() const {
    return std::all_of(node_->data.begin(), node_->data.end(),
                       [](T v) { return std::isfinite(v); });
  }

 private:
  static void check_extents(const Shape& s) {
    for (auto e : s)
      if (e == 0) throw DimensionError("zero extent in shape " + shape_str(s));
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != rank())
      throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
    std::size_t off = 0;
    std::size_t i = 0;
    for (auto v : idx) {
      if (v >= node_->shape[i]) throw DimensionError("index out of range");
      off = off * node_->shape[i] + v;
      ++i;
    }
    return off;
  }

  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of differentiable operations for one forward pass.
/// Entries are appended as operations execute, so the list is already in
/// topological order; backward() replays it in reverse and then clears it.
template <typename T>
class Tape {
 public:
  struct Entry {
    std::shared_ptr<TensorNode<T>> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor<T>& out, std::function<void()> fn) {
    entries_.push_back(Entry{out.node(), std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw UsageError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw UsageError("backward() on a tensor that was not produced by recorded operations");
    auto& g = loss.grad_buffer();
    g[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output->grad.empty()) it->backward();
    }
    entries_.clear();
  }

  /// Tape that newly executed operations record into on this thread, or null.
  static Tape* current() { return current_; }

 private:
  template <typename>
  friend class GradScope;
  static inline thread_local Tape* current_ = nullptr;

  std::vector<Entry> entries_;
};

/// Installs a tape as the recording target for the current thread for the
/// lifetime of the scope. Outside any scope, operations are not recorded.
template <typename T>
class GradScope {
 public:
  explicit GradScope(Tape<T>& tape) : prev_(Tape<T>::current_) { Tape<T>::current_ = &tape; }
  ~GradScope() { Tape<T>::current_ = prev_; }
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Replays the current thread's tape from `loss`.
template <typename T>
void backward(Tensor<T>& loss) {
  auto* tape = Tape<T>::current();
  if (!tape) throw UsageError("backward() called without an active tape");
  tape->backward(loss);
}

}  // namespace revit
