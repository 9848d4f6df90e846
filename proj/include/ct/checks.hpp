#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ct/gradcheck.hpp"

namespace ct::checks {

// One case per loss: info_nce, cl_loss, soft_cross_entropy, dice_loss,
// joint_loss (clip inactive and active) plus the tensor cosine similarity.
std::vector<GradCheckCase> loss_grad_cases();

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Every op and loss case, `trials` random inputs each, 1e-3 relative.
CheckResult gradient_suite(int trials = 10, std::uint64_t seed = 1);
// Random masks up to 16x16 with 2..6 classes; selectors and gathered
// provenance against a per-pixel enumeration.
CheckResult sampling_oracle(int masks = 100, std::uint64_t seed = 2);
// Hard-mining survivors against a full sort, pools up to 64.
CheckResult mining_oracle(int trials = 100, std::uint64_t seed = 3);
// Patch count of a side x side image with stage sizes {4, 8, 16, 32}.
CheckResult patch_arithmetic(int side = 512, std::int64_t expected = 21760);

std::vector<CheckResult> run_all();

}  // namespace ct::checks
