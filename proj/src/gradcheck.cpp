#include "ct/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ct/ops.hpp"

namespace ct {

std::vector<float> fd_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, float eps) {
  if (!(eps > 0.0f)) throw Error("fd_gradient: eps must be positive");
  NoGradGuard guard;
  std::vector<float> base = x.to_vector();
  std::vector<float> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(Tensor::from(x.shape(), std::move(plus))).item();
    const double fm = f(Tensor::from(x.shape(), std::move(minus))).item();
    out[i] = static_cast<float>((fp - fm) / (2.0 * static_cast<double>(eps)));
  }
  return out;
}

double relative_error(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return INFINITY;
  double diff = 0.0, scale = 1e-6;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) return INFINITY;
    diff = std::max(diff, static_cast<double>(std::abs(a[i] - b[i])));
    scale = std::max({scale, static_cast<double>(std::abs(a[i])), static_cast<double>(std::abs(b[i]))});
  }
  return diff / scale;
}

GradCheckResult run_grad_check(const GradCheckCase& check, int trials, std::uint64_t seed, double tolerance) {
  GradCheckResult result;
  result.name = check.name;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(check.lo, check.hi);
  std::uniform_real_distribution<float> weight_dist(-1.0f, 1.0f);
  auto sample = [&] {
    for (;;) {
      const float v = dist(rng);
      const bool near_kink =
          std::any_of(check.avoid.begin(), check.avoid.end(), [v](float k) { return std::abs(v - k) < 1e-2f; });
      if (!near_kink) return v;
    }
  };
  auto frozen = [&](std::size_t i) {
    return std::find(check.frozen.begin(), check.frozen.end(), i) != check.frozen.end();
  };

  for (int t = 0; t < trials; ++t) {
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < check.input_shapes.size(); ++i) {
      std::vector<float> v(static_cast<std::size_t>(numel_of(check.input_shapes[i])));
      for (auto& x : v) x = sample();
      inputs.push_back(Tensor::from(check.input_shapes[i], std::move(v), !frozen(i)));
    }
    Tensor out = check.fn(inputs);
    std::vector<float> w(static_cast<std::size_t>(out.numel()));
    for (auto& x : w) x = weight_dist(rng);
    const Tensor weights = Tensor::from(out.shape(), w);
    auto contract = [&](const Tensor& y) { return ops::sum(ops::mul(y, weights)); };

    backward(contract(out));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (frozen(i)) continue;
      auto f = [&](const Tensor& x) {
        auto args = inputs;
        args[i] = x;
        return contract(check.fn(args));
      };
      const auto numeric = fd_gradient(f, inputs[i], check.eps);
      std::vector<float> analytic(numeric.size(), 0.0f);
      if (inputs[i].has_grad()) std::copy(inputs[i].grad().begin(), inputs[i].grad().end(), analytic.begin());
      const double err = relative_error(analytic, numeric);
      if (err > result.worst_error || !std::isfinite(err)) {
        result.worst_error = err;
        std::ostringstream os;
        os << "input " << i << " trial " << t;
        result.detail = os.str();
      }
    }
    ++result.trials;
  }
  result.passed = std::isfinite(result.worst_error) && result.worst_error <= tolerance;
  return result;
}

std::vector<GradCheckCase> op_grad_cases() {
  using V = std::vector<Tensor>;
  std::vector<GradCheckCase> cases;
  auto add = [&](std::string name, std::vector<Shape> shapes, std::function<Tensor(const V&)> fn) -> GradCheckCase& {
    GradCheckCase c;
    c.name = std::move(name);
    c.input_shapes = std::move(shapes);
    c.fn = std::move(fn);
    cases.push_back(std::move(c));
    return cases.back();
  };

  add("add", {{3, 4}, {4}}, [](const V& x) { return ops::add(x[0], x[1]); });
  add("sub", {{2, 3}, {2, 3}}, [](const V& x) { return ops::sub(x[0], x[1]); });
  add("mul", {{2, 3, 4}, {3, 4}}, [](const V& x) { return ops::mul(x[0], x[1]); });
  add("div", {{3, 4}, {4}}, [](const V& x) { return ops::div(x[0], ops::add_scalar(x[1], 2.0f)); });
  add("scale", {{5}}, [](const V& x) { return ops::scale(x[0], -1.7f); });
  add("add_scalar", {{5}}, [](const V& x) { return ops::add_scalar(x[0], 0.3f); });
  add("exp", {{2, 3}}, [](const V& x) { return ops::exp(x[0]); });
  {
    auto& c = add("log", {{2, 3}}, [](const V& x) { return ops::log(x[0]); });
    c.lo = 0.5f;
    c.hi = 2.0f;
  }
  add("gelu", {{3, 4}}, [](const V& x) { return ops::gelu(ops::scale(x[0], 3.0f)); });
  add("clamp", {{4, 4}}, [](const V& x) { return ops::clamp(x[0], -0.5f, 0.5f); }).avoid = {-0.5f, 0.5f};
  add("layer_norm", {{3, 4}, {4}, {4}}, [](const V& x) { return ops::layer_norm(x[0], x[1], x[2]); });
  add("l2_normalize", {{3, 5}}, [](const V& x) { return ops::l2_normalize(x[0]); });
  add("softmax_axis0", {{3, 4}}, [](const V& x) { return ops::softmax(ops::scale(x[0], 2.0f), 0); });
  add("softmax_axis1", {{2, 3, 4}}, [](const V& x) { return ops::softmax(ops::scale(x[0], 2.0f), 1); });
  add("log_softmax", {{3, 5}}, [](const V& x) { return ops::log_softmax(ops::scale(x[0], 2.0f), -1); });
  add("sum", {{2, 3}}, [](const V& x) { return ops::sum(x[0]); });
  add("mean", {{2, 3}}, [](const V& x) { return ops::mean(x[0]); });
  add("sum_axis", {{2, 3, 4}}, [](const V& x) { return ops::sum(x[0], 1); });
  add("mean_axis", {{2, 3, 4}}, [](const V& x) { return ops::mean(x[0], 0); });
  add("reshape", {{2, 6}}, [](const V& x) { return ops::reshape(x[0], {3, 4}); });
  add("permute", {{2, 3, 4}}, [](const V& x) { return ops::permute(x[0], {2, 0, 1}); });
  add("transpose", {{3, 5}}, [](const V& x) { return ops::transpose(x[0]); });
  add("slice", {{3, 5, 2}}, [](const V& x) { return ops::slice(x[0], 1, 1, 4); });
  add("concat", {{2, 3}, {2, 2}}, [](const V& x) { return ops::concat({x[0], x[1]}, 1); });
  add("gather_rows", {{4, 3}}, [](const V& x) { return ops::gather_rows(x[0], {2, 0, 2, 3}); });
  add("matmul", {{3, 4}, {4, 2}}, [](const V& x) { return ops::matmul(x[0], x[1]); });
  add("matmul_trans_a", {{4, 3}, {4, 2}}, [](const V& x) { return ops::matmul(x[0], x[1], true, false); });
  add("matmul_trans_b", {{3, 4}, {2, 4}}, [](const V& x) { return ops::matmul(x[0], x[1], false, true); });
  add("matmul_trans_ab", {{4, 3}, {2, 4}}, [](const V& x) { return ops::matmul(x[0], x[1], true, true); });
  add("matmul_batched", {{2, 3, 4}, {2, 3, 4}}, [](const V& x) { return ops::matmul(x[0], x[1], false, true); });
  add("matmul_batched_ta", {{2, 4, 3}, {2, 4, 2}}, [](const V& x) { return ops::matmul(x[0], x[1], true, false); });
  add("linear", {{1, 2, 2, 3}, {3, 4}, {4}}, [](const V& x) { return ops::linear(x[0], x[1], x[2]); });
  add("avg_pool2x2", {{2, 4, 4, 2}}, [](const V& x) { return ops::avg_pool2x2(x[0]); });
  add("avg_pool3x3", {{2, 3, 4, 2}}, [](const V& x) { return ops::avg_pool3x3(x[0]); });
  add("upsample_nearest", {{1, 2, 3, 2}}, [](const V& x) { return ops::upsample_nearest(x[0], 2); });
  add("space_to_depth", {{2, 4, 4, 3}}, [](const V& x) { return ops::space_to_depth(x[0], 2); });
  return cases;
}

}  // namespace ct
