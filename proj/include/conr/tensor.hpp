#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace conr {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// N-dimensional row-major array that records the operations producing it so
/// gradients can be propagated back to leaves.
///
/// Copies share storage: a Tensor is a handle onto a node of the computation
/// graph. Leaves created with `requires_grad` accumulate gradients across
/// backward passes until `zero_grad()`.
template <typename T>
class Tensor {
 public:
  /// Receives the gradient and the value of the op output. Implementations
  /// accumulate into the gradients of their captured parents.
  using BackwardFn = std::function<void(std::span<const T> out_grad, std::span<const T> out_value)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  /// Build the output of a differentiable op. If no parent requires a gradient
  /// (or gradient recording is disabled) the result is a constant leaf.
  /// Throws NumericError if `data` holds NaN/Inf.
  static Tensor from_op(std::string_view op, Shape shape, std::vector<T> data,
                        std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<const T> data() const;
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const T> grad() const;
  /// Gradient buffer, allocated as zeros on first access.
  std::span<T> mutable_grad();
  void accumulate_grad(std::span<const T> g) const;
  void zero_grad();

  /// Reverse-mode sweep from this tensor, seeded with ones. Intermediate nodes
  /// release their graph edges afterwards.
  void backward();
  void backward(std::span<const T> seed);

  /// Same values, no history.
  Tensor detach() const;

  /// Identity of the underlying node (for caching and tests).
  const void* id() const noexcept { return impl_.get(); }

 private:
  struct Impl;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

/// While alive on the current thread, ops do not record history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace conr
