#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "conr/adamw.hpp"
#include "conr/errors.hpp"
#include "conr/rng.hpp"

using namespace conr;

namespace {

void set_grad(Tensor<double>& t, std::vector<double> g) {
  t.zero_grad();
  t.accumulate_grad(g);
}

}  // namespace

TEST(AdamW, ZeroGradientZeroDecayLeavesParametersUnchanged) {
  ParamStore<double> ps;
  auto& p = ps.add("p", {3});
  p.mutable_data()[0] = 1.5;
  p.mutable_data()[1] = -2.0;
  OptState<double> st;
  AdamWConfig cfg{.learning_rate = 0.1, .weight_decay = 0.0};
  set_grad(p, {0, 0, 0});
  adamw_step(ps, st, cfg);
  EXPECT_EQ(p.data()[0], 1.5);
  EXPECT_EQ(p.data()[1], -2.0);
  EXPECT_EQ(p.data()[2], 0.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, DecoupledDecayScalesParameters) {
  ParamStore<double> ps;
  auto& p = ps.add("p", {1});
  p.mutable_data()[0] = 2.0;
  OptState<double> st;
  AdamWConfig cfg{.learning_rate = 1.0, .weight_decay = 1e-4};
  set_grad(p, {0});
  adamw_step(ps, st, cfg);
  EXPECT_NEAR(p.data()[0], 2.0 * (1.0 - 1e-4), 1e-15);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParamStore<double> ps;
  auto& p = ps.add("p", {1});
  OptState<double> st;
  AdamWConfig cfg{.learning_rate = 0.01, .weight_decay = 0.0};
  set_grad(p, {1.0});
  adamw_step(ps, st, cfg);
  // m_hat = 1, v_hat = 1 after bias correction: update = -lr / (1 + eps).
  EXPECT_NEAR(p.data()[0], -0.01, 1e-9);
}

TEST(AdamW, ZeroDecayMatchesIndependentAdamOverTenSteps) {
  ParamStore<double> ps;
  auto& p = ps.add("w", {4});
  Rng rng(8);
  std::vector<double> ref(4);
  for (int i = 0; i < 4; ++i) ref[i] = p.mutable_data()[i] = rng.uniform(-1, 1);
  std::vector<double> m(4, 0.0), v(4, 0.0);
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  OptState<double> st;
  AdamWConfig cfg{.learning_rate = lr, .beta1 = b1, .beta2 = b2, .epsilon = eps, .weight_decay = 0.0};
  for (int t = 1; t <= 10; ++t) {
    std::vector<double> g(4);
    for (int i = 0; i < 4; ++i) g[i] = std::sin(0.7 * t + i) + 0.3 * ref[i];
    for (int i = 0; i < 4; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    // Gradient for the library uses the library's own parameter values, which
    // must track the reference exactly for the comparison to be meaningful.
    std::vector<double> gl(4);
    for (int i = 0; i < 4; ++i) gl[i] = g[i];
    set_grad(p, gl);
    adamw_step(ps, st, cfg);
    for (int i = 0; i < 4; ++i) ASSERT_NEAR(p.data()[i], ref[i], 1e-12) << "step " << t;
  }
}

TEST(AdamW, NanGradientNamesTheParameter) {
  ParamStore<double> ps;
  ps.add("good", {1});
  auto& bad = ps.add("decoder.bad", {2});
  set_grad(bad, {0.0, std::numeric_limits<double>::quiet_NaN()});
  OptState<double> st;
  try {
    adamw_step(ps, st, AdamWConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.bad"), std::string::npos);
  }
  EXPECT_EQ(st.step, 0u);
}

TEST(AdamW, InvalidConfigRejected) {
  EXPECT_THROW((AdamWConfig{.beta1 = 1.0}.validate()), ConfigError);
  EXPECT_THROW((AdamWConfig{.epsilon = 0.0}.validate()), ConfigError);
}
