#include "conr/adamw.hpp"

#include <cmath>
#include <string>

#include "conr/errors.hpp"

namespace conr {

void AdamWConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

template <typename T>
void adamw_step(ParamStore<T>& params, OptState<T>& state, const AdamWConfig& cfg) {
  cfg.validate();
  auto& entries = params.entries();
  if (state.first_moment.empty()) {
    for (const auto& e : entries) {
      state.first_moment.emplace_back(e.tensor.size(), T(0));
      state.second_moment.emplace_back(e.tensor.size(), T(0));
    }
  }
  if (state.first_moment.size() != entries.size()) {
    throw ContractError("optimizer state does not match the parameter set");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (state.first_moment[i].size() != entries[i].tensor.size()) {
      throw ContractError("optimizer state shape mismatch for '" + entries[i].name + "'");
    }
    for (const T g : entries[i].tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + entries[i].name + "'");
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& tensor = entries[i].tensor;
    auto p = tensor.mutable_data();
    const auto g = tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g.empty() ? 0.0 : static_cast<double>(g[k]);
      const double mk = cfg.beta1 * static_cast<double>(m[k]) + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * static_cast<double>(v[k]) + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / bias1;
      const double v_hat = vk / bias2;
      const double decayed = static_cast<double>(p[k]) * decay;
      p[k] = static_cast<T>(decayed - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

template void adamw_step(ParamStore<float>&, OptState<float>&, const AdamWConfig&);
template void adamw_step(ParamStore<double>&, OptState<double>&, const AdamWConfig&);

}  // namespace conr
