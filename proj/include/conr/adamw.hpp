#pragma once

#include <cstdint>
#include <vector>

#include "conr/params.hpp"

namespace conr {

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// First/second moments per parameter, in ParamStore order.
template <typename T>
struct OptState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;
};

/// One AdamW update over every parameter in `params`, reading gradients from
/// the tensors (a parameter without a gradient is treated as having a zero
/// gradient). Weight decay is decoupled: p <- p - lr * wd * p is applied
/// directly before the bias-corrected Adam update.
///
/// Throws NumericError naming the parameter if any gradient is NaN/Inf; no
/// parameter is modified in that case.
template <typename T>
void adamw_step(ParamStore<T>& params, OptState<T>& state, const AdamWConfig& cfg);

}  // namespace conr
