#include "conr/params.hpp"

#include <cmath>

#include "conr/errors.hpp"
#include "conr/rng.hpp"

namespace conr {

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({name, Tensor<T>::zeros(std::move(shape), true)});
  return entries_.back().tensor;
}

template <typename T>
Tensor<T>& ParamStore<T>::add_conv_weight(const std::string& name, int cout, int cin, int k, std::uint64_t seed,
                                          double gain) {
  auto& t = add(name, {cout, cin, k, k});
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(cin * k * k));
  Rng rng(derive_seed(seed, hash_name(name)));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(std::string_view name) {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace conr
