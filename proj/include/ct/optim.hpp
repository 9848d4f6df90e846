#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ct/tensor.hpp"

namespace ct {

struct AdamWOptions {
  float lr = 8e-5f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

// Named trainable leaves plus their optimizer state. Insertion order is the
// canonical order for iteration, checkpoints and clipping.
class Parameters {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    std::vector<float> first_moment;
    std::vector<float> second_moment;
  };

  // Registers `init` (copied) as a trainable leaf and returns it.
  Tensor add(std::string name, const Tensor& init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t scalar_count() const;

  std::int64_t step() const { return step_; }
  void zero_grad();

 private:
  friend void adamw_step(Parameters&, const AdamWOptions&);
  std::vector<Entry> entries_;
  std::int64_t step_ = 0;
};

void adamw_step(Parameters& params, const AdamWOptions& options);
void adamw_step(Parameters& params, float lr, std::pair<float, float> betas, float weight_decay);

// Scales all grads so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_gradients(Parameters& params, double max_norm);
double global_grad_norm(const Parameters& params);

}  // namespace ct
