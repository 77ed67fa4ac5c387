#include "conr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "conr/ops.hpp"

namespace conr {

namespace {

Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(d), true);
}

// Values bounded away from zero, for ops with a kink at the origin.
Tensor<double> random_away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> d(numel(shape));
  for (auto& v : d) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return Tensor<double>(std::move(shape), std::move(d), true);
}

double projected_sum(const Tensor<double>& out, const std::vector<double>& r) {
  const auto d = out.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) acc += d[i] * r[i];
  return acc;
}

}  // namespace

double max_relative_grad_error(const GradCheckProblem& problem, std::uint64_t seed, double h) {
  std::vector<Tensor<double>> inputs;
  for (const auto& t : problem.inputs) inputs.emplace_back(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);

  Tensor<double> out = problem.fn(inputs);
  Rng rng(seed);
  std::vector<double> r(out.size());
  for (auto& v : r) v = rng.uniform(-1.0, 1.0);
  out.backward(r);

  double worst = 0.0;
  for (auto& in : inputs) {
    std::vector<double> analytic(in.size(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
    auto values = in.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        plus = projected_sum(problem.fn(inputs), r);
        values[i] = saved - h;
        minus = projected_sum(problem.fn(inputs), r);
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

std::vector<GradCheckCase> tensor_gradcheck_cases() {
  using T = Tensor<double>;
  using Inputs = std::vector<T>;
  std::vector<GradCheckCase> cases;

  cases.push_back({"conv2d", [](Rng& rng) {
                     const int stride = rng.uniform_int(1, 2);
                     const int k = rng.bernoulli(0.3) ? 1 : 3;
                     const int pad = k / 2;
                     const int size = 5;
                     return GradCheckProblem{
                         {random_tensor(rng, {1, 2, size, size}), random_tensor(rng, {3, 2, k, k}),
                          random_tensor(rng, {3})},
                         [stride, pad](const Inputs& in) { return ops::conv2d(in[0], in[1], in[2], stride, pad); }};
                   }});
  cases.push_back({"upsample_nearest", [](Rng& rng) {
                     const int f = rng.uniform_int(1, 3);
                     return GradCheckProblem{{random_tensor(rng, {2, 2, 3, 2})},
                                             [f](const Inputs& in) { return ops::upsample_nearest(in[0], f); }};
                   }});
  cases.push_back({"avg_pool2", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {1, 2, 4, 6})},
                                             [](const Inputs& in) { return ops::avg_pool2(in[0]); }};
                   }});
  cases.push_back({"resize_nearest", [](Rng& rng) {
                     const int oh = rng.uniform_int(1, 7);
                     const int ow = rng.uniform_int(1, 7);
                     return GradCheckProblem{{random_tensor(rng, {1, 2, 4, 5})},
                                             [oh, ow](const Inputs& in) { return ops::resize_nearest(in[0], oh, ow); }};
                   }});
  cases.push_back({"grid_sample_bilinear", [](Rng& rng) {
                     const int h = 5, w = 6;
                     auto x = random_tensor(rng, {1, 2, h, w});
                     // Sample locations stay inside the image with fractional parts
                     // away from the integer kinks of bilinear interpolation.
                     std::vector<double> flow(2 * h * w);
                     for (int i = 0; i < h; ++i) {
                       for (int j = 0; j < w; ++j) {
                         const double tx = rng.uniform_int(0, w - 2) + rng.uniform(0.1, 0.9);
                         const double ty = rng.uniform_int(0, h - 2) + rng.uniform(0.1, 0.9);
                         flow[i * w + j] = tx - j;
                         flow[h * w + i * w + j] = ty - i;
                       }
                     }
                     return GradCheckProblem{{x, T({1, 2, h, w}, flow, true)}, [](const Inputs& in) {
                                               return ops::grid_sample_bilinear(in[0], in[1]);
                                             }};
                   }});
  cases.push_back({"concat_channels", [](Rng& rng) {
                     return GradCheckProblem{
                         {random_tensor(rng, {2, 1, 3, 3}), random_tensor(rng, {2, 3, 3, 3}),
                          random_tensor(rng, {2, 2, 3, 3})},
                         [](const Inputs& in) { return ops::concat_channels<double>(std::span<const T>(in)); }};
                   }});
  cases.push_back({"slice_channels", [](Rng& rng) {
                     const int begin = rng.uniform_int(0, 3);
                     const int count = rng.uniform_int(1, 5 - begin);
                     return GradCheckProblem{{random_tensor(rng, {2, 5, 3, 2})}, [begin, count](const Inputs& in) {
                                               return ops::slice_channels(in[0], begin, count);
                                             }};
                   }});
  cases.push_back({"leaky_relu", [](Rng& rng) {
                     return GradCheckProblem{{random_away_from_zero(rng, {1, 3, 4, 4})},
                                             [](const Inputs& in) { return ops::leaky_relu(in[0], 0.1); }};
                   }});
  cases.push_back({"sigmoid", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {1, 3, 4, 4}, -4.0, 4.0)},
                                             [](const Inputs& in) { return ops::sigmoid(in[0]); }};
                   }});
  cases.push_back({"tanh", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {1, 3, 4, 4}, -3.0, 3.0)},
                                             [](const Inputs& in) { return ops::tanh(in[0]); }};
                   }});
  cases.push_back({"add", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {1, 2, 3, 3}), random_tensor(rng, {1, 2, 3, 3})},
                                             [](const Inputs& in) { return ops::add(in[0], in[1]); }};
                   }});
  cases.push_back({"sub", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {1, 2, 3, 3}), random_tensor(rng, {1, 2, 3, 3})},
                                             [](const Inputs& in) { return ops::sub(in[0], in[1]); }};
                   }});
  cases.push_back({"mul", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {1, 2, 3, 3}), random_tensor(rng, {1, 2, 3, 3})},
                                             [](const Inputs& in) { return ops::mul(in[0], in[1]); }};
                   }});
  cases.push_back({"scale", [](Rng& rng) {
                     const double f = rng.uniform(-2.0, 2.0);
                     return GradCheckProblem{{random_tensor(rng, {1, 2, 3, 3})},
                                             [f](const Inputs& in) { return ops::scale(in[0], f); }};
                   }});
  cases.push_back({"weighted_set_mean", [](Rng& rng) {
                     const int n = rng.uniform_int(1, 4);
                     GradCheckProblem p;
                     for (int i = 0; i < n; ++i) p.inputs.push_back(random_tensor(rng, {2, 3, 3, 4}));
                     for (int i = 0; i < n; ++i) p.inputs.push_back(random_tensor(rng, {2, 1, 3, 4}, 0.0, 1.0));
                     p.fn = [n](const Inputs& in) {
                       std::span<const T> all(in);
                       return ops::weighted_set_mean(all.subspan(0, n), all.subspan(n, n));
                     };
                     return p;
                   }});
  cases.push_back({"set_mean", [](Rng& rng) {
                     const int n = rng.uniform_int(1, 4);
                     GradCheckProblem p;
                     for (int i = 0; i < n; ++i) p.inputs.push_back(random_tensor(rng, {1, 2, 3, 3}));
                     p.fn = [](const Inputs& in) { return ops::set_mean<double>(std::span<const T>(in)); };
                     return p;
                   }});
  cases.push_back({"mean", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {2, 3, 2, 2})},
                                             [](const Inputs& in) { return ops::mean(in[0]); }};
                   }});
  cases.push_back({"weighted_sum", [](Rng& rng) {
                     std::vector<double> w{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
                     return GradCheckProblem{{random_tensor(rng, {1}), random_tensor(rng, {1}), random_tensor(rng, {1})},
                                             [w](const Inputs& in) {
                                               return ops::weighted_sum<double>(std::span<const T>(in), w);
                                             }};
                   }});
  cases.push_back({"normalize_channels", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {2, 4, 3, 3})},
                                             [](const Inputs& in) { return ops::normalize_channels(in[0], 1e-10); }};
                   }});
  cases.push_back({"composite_over_white", [](Rng& rng) {
                     return GradCheckProblem{{random_tensor(rng, {2, 4, 3, 3}, 0.0, 1.0)},
                                             [](const Inputs& in) { return ops::composite_over_white(in[0]); }};
                   }});
  return cases;
}

std::vector<GradCheckReport> run_gradcheck(const std::vector<GradCheckCase>& cases, int instances,
                                           double tolerance, std::uint64_t seed) {
  std::vector<GradCheckReport> reports;
  for (const auto& c : cases) {
    GradCheckReport rep;
    rep.op = c.op;
    rep.instances = instances;
    Rng rng(derive_seed(seed, hash_name(c.op)));
    for (int i = 0; i < instances; ++i) {
      const GradCheckProblem problem = c.make(rng);
      const double err = max_relative_grad_error(problem, rng.next_u64());
      if (err >= rep.max_rel_error || rep.shapes.empty()) {
        std::string shapes;
        for (const auto& t : problem.inputs) shapes += (shapes.empty() ? "" : " ") + shape_str(t.shape());
        rep.shapes = shapes;
        rep.max_rel_error = std::max(rep.max_rel_error, err);
      }
    }
    rep.passed = rep.max_rel_error < tolerance;
    reports.push_back(rep);
  }
  return reports;
}

}  // namespace conr
