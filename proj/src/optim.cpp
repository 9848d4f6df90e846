#include "ct/optim.hpp"

#include <algorithm>
#include <cmath>

namespace ct {

Tensor Parameters::add(std::string name, const Tensor& init) {
  if (contains(name)) throw Error("parameters: duplicate leaf '" + name + "'");
  Tensor leaf = Tensor::from(init.shape(), init.to_vector(), true);
  const auto n = static_cast<std::size_t>(leaf.numel());
  entries_.push_back({std::move(name), leaf, std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)});
  return leaf;
}

const Tensor& Parameters::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw Error("parameters: no leaf named '" + name + "'");
}

bool Parameters::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::int64_t Parameters::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void Parameters::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

void adamw_step(Parameters& params, const AdamWOptions& o) {
  for (const auto& e : params.entries_) {
    if (!e.value.has_grad()) throw Error("adamw_step: leaf '" + e.name + "' has no gradient");
  }
  const auto t = ++params.step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(o.beta1), static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(o.beta2), static_cast<double>(t));
  for (auto& e : params.entries_) {
    auto w = e.value.mutable_values();
    auto g = e.value.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= o.lr * o.weight_decay * w[i];
      e.first_moment[i] = o.beta1 * e.first_moment[i] + (1.0f - o.beta1) * g[i];
      e.second_moment[i] = o.beta2 * e.second_moment[i] + (1.0f - o.beta2) * g[i] * g[i];
      const double m_hat = e.first_moment[i] / bc1;
      const double v_hat = e.second_moment[i] / bc2;
      w[i] -= static_cast<float>(o.lr * m_hat / (std::sqrt(v_hat) + o.eps));
    }
  }
}

void adamw_step(Parameters& params, float lr, std::pair<float, float> betas, float weight_decay) {
  AdamWOptions o;
  o.lr = lr;
  o.beta1 = betas.first;
  o.beta2 = betas.second;
  o.weight_decay = weight_decay;
  adamw_step(params, o);
}

double global_grad_norm(const Parameters& params) {
  double ss = 0.0;
  for (const auto& e : params.entries())
    for (float g : e.value.grad()) ss += static_cast<double>(g) * g;
  return std::sqrt(ss);
}

double clip_gradients(Parameters& params, double max_norm) {
  if (!(max_norm > 0.0)) throw Error("clip_gradients: max_norm must be positive");
  const double norm = global_grad_norm(params);
  // Norms within float rounding of max_norm are left alone, so clipping an
  // already-clipped set is a no-op.
  if (norm > max_norm * (1.0 + 1e-6)) {
    const double coef = max_norm / norm;
    for (auto& e : params.entries()) {
      if (!e.value.has_grad()) continue;
      for (float& g : e.value.mutable_grad()) g = static_cast<float>(g * coef);
    }
  }
  return norm;
}

}  // namespace ct
