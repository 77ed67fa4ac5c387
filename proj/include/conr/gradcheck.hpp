#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "conr/rng.hpp"
#include "conr/tensor.hpp"

namespace conr {

/// One random instance of an op under test. Every input is differentiated.
struct GradCheckProblem {
  std::vector<Tensor<double>> inputs;
  std::function<Tensor<double>(const std::vector<Tensor<double>>&)> fn;
};

struct GradCheckCase {
  std::string op;
  std::function<GradCheckProblem(Rng&)> make;
};

struct GradCheckReport {
  std::string op;
  std::string shapes;  // input shapes of the worst instance
  int instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Max over all input elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-6),
/// using central differences of step `h` on the scalar sum(fn(inputs) * R) for a
/// fixed random projection R.
double max_relative_grad_error(const GradCheckProblem& problem, std::uint64_t seed, double h = 1e-6);

/// Tensor-core ops: conv2d, resampling, grid sampling, channel plumbing,
/// activations, arithmetic and set reductions.
std::vector<GradCheckCase> tensor_gradcheck_cases();

std::vector<GradCheckReport> run_gradcheck(const std::vector<GradCheckCase>& cases, int instances,
                                           double tolerance, std::uint64_t seed);

}  // namespace conr
