#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ct/tensor.hpp"

namespace ct::losses {

// Plain-value cosine similarity. A zero vector gives 0 and sets *zero_norm.
float cosine_similarity(std::span<const float> u, std::span<const float> v, bool* zero_norm = nullptr);

// Differentiable cosine similarity along the last axis: [..., n] x [..., n] -> [...].
Tensor cosine_similarity(const Tensor& u, const Tensor& v);

// Mean InfoNCE over rows: anchors[i] should pick positives[i] out of
// {positives[i]} U negatives. anchors/positives: [P, n] (or [n]); negatives: [M, n].
// Returns nullopt (skip) when there are no anchors or no negatives.
std::optional<Tensor> info_nce(const Tensor& anchors, const Tensor& positives, const Tensor& negatives, float tau);

// Binary soft cross-entropy over similarity rescaled to [0, 1]. Row i of u and
// v forms one pair with target[i] in {0, 1}. nullopt when there are no pairs.
std::optional<Tensor> cl_loss(const Tensor& u, const Tensor& v, std::span<const float> targets, float smoothing);

// Label-smoothed cross-entropy over logits [..., K] against one label per
// row (ignore label excluded). nullopt when every pixel is ignored.
std::optional<Tensor> soft_cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels, float smoothing);

// 1 - mean over classes present in `labels` of (2 sum p*y + 1) / (sum p + sum y + 1).
Tensor dice_loss(const Tensor& probs, std::span<const std::uint8_t> labels);

struct ContrastiveTerm {
  int stage = 0;
  int cls = 0;
  std::optional<Tensor> loss;  // nullopt marks a skipped (stage, class)
};

struct LossBreakdown {
  double seg_ce = 0.0;
  double seg_dice = 0.0;
  double contrastive_raw = 0.0;
  double contrastive_clipped = 0.0;
  double total = 0.0;
  std::map<std::pair<int, int>, double> per_stage_class;  // (stage, class) -> term
};

struct JointLoss {
  Tensor total;
  LossBreakdown breakdown;
};

// What reaches the contrastive terms while the clip is active. Block: nothing.
// Rescale: the gradient of raw times clip / raw.
enum class ClipGradient { Block, Rescale };

// total = ce + dice + min(mean of contributing terms, clip).
JointLoss joint_loss(const std::optional<Tensor>& ce, const Tensor& dice, const std::vector<ContrastiveTerm>& terms,
                     float clip = 1.0f, ClipGradient mode = ClipGradient::Block);

}  // namespace ct::losses
