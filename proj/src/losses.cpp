#include "conr/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "conr/errors.hpp"
#include "conr/ops.hpp"

namespace conr {

namespace {

struct Counters {
  std::atomic<std::uint64_t> udp{0}, mask{0}, perc{0}, photo{0}, cons{0};
};
Counters g_calls;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                        " differ");
}

template <typename T>
void require_udp(const Tensor<T>& t, const char* what) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 4)
    throw ContractError(std::string(what) + ": expected [1,4,H,W], got " + shape_str(t.shape()));
}

template <typename T>
Tensor<T> mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mean_abs_diff");
  const auto as = a.data(), bs = b.data();
  const std::size_t n = as.size();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(as[i] - bs[i]);
  return Tensor<T>::from_op("mean_abs_diff", {1}, {acc / T(n)}, {a, b},
                            [a, b, n](std::span<const T> g, std::span<const T>) {
                              const auto as = a.data(), bs = b.data();
                              std::vector<T> da(n);
                              for (std::size_t i = 0; i < n; ++i) {
                                const T d = as[i] - bs[i];
                                da[i] = d > 0 ? g[0] / T(n) : d < 0 ? -g[0] / T(n) : T(0);
                              }
                              a.accumulate_grad(da);
                              for (auto& v : da) v = -v;
                              b.accumulate_grad(da);
                            });
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {alpha, beta, gamma, theta})
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
}

double total_loss(const LossValues& p, const LossWeights& w, bool has_udp_gt) {
  const std::pair<const char*, double> parts[] = {
      {"L_udp", p.udp}, {"L_mask", p.mask}, {"L_perc", p.perc}, {"L_photo", p.photo}, {"L_cons", p.cons}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw NumericError(std::string(name) + " is not finite");
  double total = 0;
  if (has_udp_gt) total += p.udp + w.alpha * p.mask;
  return total + w.beta * p.perc + w.gamma * p.photo + w.theta * p.cons;
}

template <typename T>
Tensor<T> total_loss(const LossTerms<T>& t, const LossWeights& w, bool has_udp_gt) {
  const std::pair<const char*, const Tensor<T>*> named[] = {
      {"L_udp", &t.udp}, {"L_mask", &t.mask}, {"L_perc", &t.perc}, {"L_photo", &t.photo}, {"L_cons", &t.cons}};
  for (const auto& [name, x] : named)
    if (x->defined() && !std::isfinite(x->item())) throw NumericError(std::string(name) + " is not finite");
  std::vector<Tensor<T>> terms;
  std::vector<double> weights;
  auto push = [&](const Tensor<T>& x, double weight) {
    if (!x.defined()) return;
    terms.push_back(x);
    weights.push_back(weight);
  };
  if (has_udp_gt) {
    push(t.udp, 1.0);
    push(t.mask, w.alpha);
  }
  push(t.perc, w.beta);
  push(t.photo, w.gamma);
  push(t.cons, w.theta);
  if (terms.empty()) return Tensor<T>::scalar(T(0));
  return ops::weighted_sum<T>(terms, weights);
}

LossCallCounts loss_call_counts() {
  return {g_calls.udp.load(), g_calls.mask.load(), g_calls.perc.load(), g_calls.photo.load(), g_calls.cons.load()};
}

void reset_loss_call_counts() {
  g_calls.udp = 0;
  g_calls.mask = 0;
  g_calls.perc = 0;
  g_calls.photo = 0;
  g_calls.cons = 0;
}

template <typename T>
UdpLoss<T> loss_udp(const Tensor<T>& pred, const Tensor<T>& gt) {
  ++g_calls.udp;
  require_udp(pred, "loss_udp");
  require_same_shape(pred, gt, "loss_udp");
  const std::size_t plane = static_cast<std::size_t>(pred.dim(2)) * pred.dim(3);
  const auto ps = pred.data(), gs = gt.data();
  std::vector<std::size_t> occupied;
  for (std::size_t p = 0; p < plane; ++p)
    if (gs[3 * plane + p] >= T(0.5)) occupied.push_back(p);
  if (occupied.empty()) return {Tensor<T>::scalar(T(0)), true};
  const T denom = T(3 * occupied.size());
  T acc = 0;
  for (int c = 0; c < 3; ++c)
    for (std::size_t p : occupied) acc += std::abs(ps[c * plane + p] - gs[c * plane + p]);
  auto value = Tensor<T>::from_op(
      "loss_udp", {1}, {acc / denom}, {pred},
      [pred, gt, plane, denom, occupied = std::move(occupied)](std::span<const T> g, std::span<const T>) {
        const auto ps = pred.data(), gs = gt.data();
        std::vector<T> dp(ps.size(), T(0));
        for (int c = 0; c < 3; ++c)
          for (std::size_t p : occupied) {
            const T d = ps[c * plane + p] - gs[c * plane + p];
            dp[c * plane + p] = d > 0 ? g[0] / denom : d < 0 ? -g[0] / denom : T(0);
          }
        pred.accumulate_grad(dp);
      });
  return {value, false};
}

template <typename T>
Tensor<T> loss_mask(const Tensor<T>& pred, const Tensor<T>& gt) {
  ++g_calls.mask;
  require_same_shape(pred, gt, "loss_mask");
  constexpr T lo = T(1e-7), hi = T(1) - T(1e-7);
  const auto ps = pred.data(), gs = gt.data();
  const std::size_t n = ps.size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(ps[i], lo, hi);
    acc -= gs[i] * std::log(p) + (1 - gs[i]) * std::log(1 - p);
  }
  return Tensor<T>::from_op("loss_mask", {1}, {T(acc / double(n))}, {pred},
                            [pred, gt, n](std::span<const T> g, std::span<const T>) {
                              const auto ps = pred.data(), gs = gt.data();
                              std::vector<T> dp(n, T(0));
                              for (std::size_t i = 0; i < n; ++i) {
                                const T p = ps[i];
                                if (p < lo || p > hi) continue;
                                dp[i] = g[0] * (p - gs[i]) / (p * (1 - p)) / T(n);
                              }
                              pred.accumulate_grad(dp);
                            });
}

template <typename T>
Tensor<T> loss_cons(std::span<const Tensor<T>> preds, const Tensor<T>& mean) {
  ++g_calls.cons;
  if (preds.empty()) throw EmptySetError("loss_cons needs at least one prediction");
  for (const auto& p : preds) require_same_shape(p, mean, "loss_cons");
  const std::size_t k = preds.size();
  if (k == 1) return Tensor<T>::scalar(T(0));
  const std::size_t n = mean.size();
  const auto ms = mean.data();
  std::vector<T> sd(n, T(0));
  for (const auto& p : preds) {
    const auto ps = p.data();
    for (std::size_t i = 0; i < n; ++i) sd[i] += (ps[i] - ms[i]) * (ps[i] - ms[i]);
  }
  T acc = 0;
  for (auto& v : sd) {
    v = std::sqrt(v / T(k - 1));
    acc += v;
  }
  std::vector<Tensor<T>> parents(preds.begin(), preds.end());
  parents.push_back(mean);
  return Tensor<T>::from_op(
      "loss_cons", {1}, {acc / T(n)}, parents,
      [parents, sd = std::move(sd), k, n](std::span<const T> g, std::span<const T>) {
        const auto ms = parents.back().data();
        std::vector<T> dm(n, T(0)), dp(n);
        for (std::size_t j = 0; j < k; ++j) {
          const auto ps = parents[j].data();
          for (std::size_t i = 0; i < n; ++i) {
            dp[i] = sd[i] > 0 ? g[0] * (ps[i] - ms[i]) / (T(k - 1) * sd[i] * T(n)) : T(0);
            dm[i] -= dp[i];
          }
          parents[j].accumulate_grad(dp);
        }
        parents.back().accumulate_grad(dm);
      });
}

template <typename T>
Tensor<T> loss_photo(const Tensor<T>& rendered, const Tensor<T>& gt) {
  ++g_calls.photo;
  require_same_shape(rendered, gt, "loss_photo");
  return mean_abs_diff(ops::composite_over_white(rendered), ops::composite_over_white(gt));
}

template <typename T>
PerceptualProxy<T>::PerceptualProxy(std::uint64_t seed) {
  const int widths[4] = {3, 8, 16, 32};
  for (int s = 0; s < 3; ++s) {
    const std::string name = "perc.s" + std::to_string(s);
    params_.add_conv_weight(name + ".w", widths[s + 1], widths[s], 3, seed).set_requires_grad(false);
    params_.add(name + ".b", {widths[s + 1]}).set_requires_grad(false);
  }
}

template <typename T>
Tensor<T> PerceptualProxy<T>::loss(const Tensor<T>& a, const Tensor<T>& b) const {
  ++g_calls.perc;
  require_same_shape(a, b, "loss_perc");
  Tensor<T> fa = ops::composite_over_white(a), fb = ops::composite_over_white(b);
  std::vector<Tensor<T>> terms;
  for (int s = 0; s < 3; ++s) {
    const std::string name = "perc.s" + std::to_string(s);
    const auto& w = params_.get(name + ".w");
    const auto& bias = params_.get(name + ".b");
    if (s > 0) {
      fa = ops::avg_pool2(fa);
      fb = ops::avg_pool2(fb);
    }
    fa = ops::leaky_relu(ops::conv2d(fa, w, bias, 1, 1), T(0.2));
    fb = ops::leaky_relu(ops::conv2d(fb, w, bias, 1, 1), T(0.2));
    const auto d = ops::sub(ops::normalize_channels(fa, T(1e-6)), ops::normalize_channels(fb, T(1e-6)));
    terms.push_back(ops::mean(ops::mul(d, d)));
  }
  const double ones[] = {1.0, 1.0, 1.0};
  return ops::weighted_sum<T>(terms, ones);
}

template Tensor<float> total_loss<float>(const LossTerms<float>&, const LossWeights&, bool);
template Tensor<double> total_loss<double>(const LossTerms<double>&, const LossWeights&, bool);
template UdpLoss<float> loss_udp<float>(const Tensor<float>&, const Tensor<float>&);
template UdpLoss<double> loss_udp<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> loss_mask<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> loss_mask<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> loss_cons<float>(std::span<const Tensor<float>>, const Tensor<float>&);
template Tensor<double> loss_cons<double>(std::span<const Tensor<double>>, const Tensor<double>&);
template Tensor<float> loss_photo<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> loss_photo<double>(const Tensor<double>&, const Tensor<double>&);
template class PerceptualProxy<float>;
template class PerceptualProxy<double>;

}  // namespace conr
