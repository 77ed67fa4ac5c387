#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "conr/tensor.hpp"

namespace conr {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered collection of learnable tensors addressed by name.
template <typename T>
class ParamStore {
 public:
  /// Registers a zero-initialised parameter. Names must be unique.
  Tensor<T>& add(const std::string& name, Shape shape);
  /// Conv kernel [cout, cin, k, k] drawn uniformly in +-gain*sqrt(6/fan_in)
  /// from a seed derived from (seed, name).
  Tensor<T>& add_conv_weight(const std::string& name, int cout, int cin, int k, std::uint64_t seed,
                             double gain = 1.0);

  bool contains(std::string_view name) const;
  const Tensor<T>& get(std::string_view name) const;
  Tensor<T>& get(std::string_view name);

  std::vector<NamedParam<T>>& entries() { return entries_; }
  const std::vector<NamedParam<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Total number of scalar parameters.
  std::size_t scalar_count() const;
  void zero_grad();

  /// Same names, shapes and values in another precision (detached).
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      auto& t = out.add(e.name, e.tensor.shape());
      auto dst = t.mutable_data();
      const auto src = e.tensor.data();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
    }
    return out;
  }

 private:
  std::vector<NamedParam<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace conr
