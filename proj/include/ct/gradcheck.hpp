#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ct/tensor.hpp"

namespace ct {

// Central-difference estimate of d f / d x, one element at a time. `f` is
// evaluated with recording disabled on perturbed copies of `x`.
std::vector<float> fd_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, float eps);

// max_i |a_i - b_i| / max(max|a|, max|b|, 1e-6)
double relative_error(std::span<const float> a, std::span<const float> b);

// A differentiable function of several inputs, checked by contracting its
// output with fixed random weights and comparing autodiff with fd_gradient.
struct GradCheckCase {
  std::string name;
  std::vector<Shape> input_shapes;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
  float lo = -1.0f;
  float hi = 1.0f;
  // Inputs closer than 1e-2 to any of these points are resampled (kinks).
  std::vector<float> avoid;
  // Inputs whose gradient is not checked (index lists, constant targets).
  std::vector<std::size_t> frozen;
  // Central-difference step. Composite losses accumulate float rounding, so
  // they use a larger step near cbrt(float epsilon).
  float eps = 1e-3f;
};

struct GradCheckResult {
  std::string name;
  int trials = 0;
  double worst_error = 0.0;
  bool passed = false;
  std::string detail;
};

GradCheckResult run_grad_check(const GradCheckCase& check, int trials, std::uint64_t seed, double tolerance = 1e-3);

// One case per primitive in ct::ops.
std::vector<GradCheckCase> op_grad_cases();

}  // namespace ct
