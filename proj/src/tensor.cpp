#include "conr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "conr/errors.hpp"

namespace conr {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ContractError("tensor dimensions must be positive, got " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct Tensor<T>::Impl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Impl>> parents;
  BackwardFn backward;
};

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  if (numel(shape) != data.size()) {
    throw ContractError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(std::string_view op, Shape shape, std::vector<T> data,
                             std::vector<Tensor> parents, BackwardFn backward) {
  for (const T v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
  Tensor out(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (!any) return out;
  auto& impl = *out.impl_;
  impl.requires_grad = true;
  impl.leaf = false;
  impl.parents.reserve(parents.size());
  for (const auto& p : parents) {
    if (p.defined()) impl.parents.push_back(p.impl_);
  }
  impl.backward = std::move(backward);
  return out;
}

template <typename T>
typename Tensor<T>::Impl& Tensor<T>::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return impl().shape;
}

template <typename T>
int Tensor<T>::dim(std::size_t axis) const {
  const auto& s = impl().shape;
  if (axis >= s.size()) throw ContractError("axis out of range for shape " + shape_str(s));
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::size() const {
  return impl().data.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return impl().data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  return impl().data;
}

template <typename T>
T Tensor<T>::item() const {
  const auto& d = impl().data;
  if (d.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(impl().shape));
  return d[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return impl().requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  auto& i = impl();
  if (!i.leaf) throw ContractError("requires_grad can only be changed on leaf tensors");
  i.requires_grad = on;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return !impl().grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return impl().grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  auto& i = impl();
  if (i.grad.empty()) i.grad.assign(i.data.size(), T(0));
  return i.grad;
}

template <typename T>
void Tensor<T>::accumulate_grad(std::span<const T> g) const {
  auto& i = impl();
  if (!i.requires_grad) return;
  if (g.size() != i.data.size()) throw ContractError("gradient length mismatch");
  if (i.grad.empty()) {
    i.grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t k = 0; k < g.size(); ++k) i.grad[k] += g[k];
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl().grad.clear();
}

template <typename T>
void Tensor<T>::backward() {
  std::vector<T> seed(size(), T(1));
  backward(seed);
}

template <typename T>
void Tensor<T>::backward(std::span<const T> seed) {
  auto& root = impl();
  if (!root.requires_grad) throw ContractError("backward() on a tensor that does not require grad");
  if (seed.size() != root.data.size()) throw ContractError("backward seed length mismatch");

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Impl* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Tensor(impl_).accumulate_grad(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    if (node->leaf || !node->backward || node->grad.empty()) continue;
    node->backward(node->grad, node->data);
  }
  for (Impl* node : order) {
    if (node->leaf) continue;
    node->backward = nullptr;
    node->parents.clear();
    if (node != &root) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl().shape, impl().data, false);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace conr
