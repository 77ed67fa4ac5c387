#pragma once

#include <cstdint>
#include <span>

#include "conr/params.hpp"
#include "conr/tensor.hpp"

namespace conr {

struct LossWeights {
  double alpha = 1.0;   // mask
  double beta = 0.05;   // perceptual
  double gamma = 1.0;   // photometric
  double theta = 1.0;   // consistency

  void validate() const;
};

/// Scalar loss values. A term that was not evaluated is 0.
struct LossValues {
  double udp = 0, mask = 0, perc = 0, photo = 0, cons = 0;
};

/// L_udp + alpha L_mask + beta L_perc + gamma L_photo + theta L_cons. Without
/// UDP ground truth the udp and mask terms are dropped. Throws NumericError
/// naming the first non-finite part.
double total_loss(const LossValues& parts, const LossWeights& w, bool has_udp_gt);

/// Differentiable counterpart; undefined terms are skipped.
template <typename T>
struct LossTerms {
  Tensor<T> udp, mask, perc, photo, cons;
};
template <typename T>
Tensor<T> total_loss(const LossTerms<T>& terms, const LossWeights& w, bool has_udp_gt);

/// Number of evaluations of each loss since the last reset.
struct LossCallCounts {
  std::uint64_t udp = 0, mask = 0, perc = 0, photo = 0, cons = 0;
};
LossCallCounts loss_call_counts();
void reset_loss_call_counts();

template <typename T>
struct UdpLoss {
  Tensor<T> value;
  bool empty_mask = false;  // no occupied ground-truth pixel; value is 0
};

/// Mean |pred - gt| over the 3 landmark channels at pixels whose ground-truth
/// occupancy is 1. pred, gt: [1,4,H,W].
template <typename T>
UdpLoss<T> loss_udp(const Tensor<T>& pred, const Tensor<T>& gt);

/// Mean binary cross-entropy, pred clamped to [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> loss_mask(const Tensor<T>& pred_occ, const Tensor<T>& gt_occ);

/// Mean over elements of sqrt(sum_j (p_j - mean)^2 / (k - 1)); 0 for k = 1.
template <typename T>
Tensor<T> loss_cons(std::span<const Tensor<T>> preds, const Tensor<T>& mean);

/// Mean absolute RGB error after compositing both RGBA images over white.
template <typename T>
Tensor<T> loss_photo(const Tensor<T>& rendered, const Tensor<T>& gt);

/// Frozen random three-stage conv feature extractor. The loss is the sum over
/// stages of the mean squared difference of unit-normalized features of the
/// two images composited over white.
template <typename T>
class PerceptualProxy {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eed0f1e7u;
  explicit PerceptualProxy(std::uint64_t seed = kDefaultSeed);

  Tensor<T> loss(const Tensor<T>& a, const Tensor<T>& b) const;
  const ParamStore<T>& params() const { return params_; }

 private:
  ParamStore<T> params_;
};

extern template class PerceptualProxy<float>;
extern template class PerceptualProxy<double>;

}  // namespace conr
