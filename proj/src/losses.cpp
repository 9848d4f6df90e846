#include "ct/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ct/ops.hpp"
#include "ct/raster.hpp"

namespace ct::losses {

namespace {

constexpr float kProbFloor = 1e-6f;

Tensor as_rows(const Tensor& x) { return x.rank() == 1 ? ops::reshape(x, {1, x.dim(0)}) : x; }

}  // namespace

float cosine_similarity(std::span<const float> u, std::span<const float> v, bool* zero_norm) {
  if (u.size() != v.size()) throw ShapeError("cosine_similarity: vector lengths differ");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    uu += static_cast<double>(u[i]) * u[i];
    vv += static_cast<double>(v[i]) * v[i];
  }
  const bool degenerate = uu == 0.0 || vv == 0.0;
  if (zero_norm) *zero_norm = degenerate;
  if (degenerate) return 0.0f;
  return static_cast<float>(std::clamp(dot / std::sqrt(uu * vv), -1.0, 1.0));
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape())
    throw ShapeError("cosine_similarity: shape mismatch " + to_string(u.shape()) + " vs " + to_string(v.shape()));
  return ops::sum(ops::mul(ops::l2_normalize(u), ops::l2_normalize(v)), -1);
}

std::optional<Tensor> info_nce(const Tensor& anchors, const Tensor& positives, const Tensor& negatives, float tau) {
  if (!(tau > 0.0f)) throw Error("info_nce: temperature must be positive");
  const Tensor a = as_rows(anchors);
  const Tensor p = as_rows(positives);
  const Tensor n = as_rows(negatives);
  if (a.shape() != p.shape() || a.rank() != 2 || n.rank() != 2 || n.dim(1) != a.dim(1)) {
    throw ShapeError("info_nce: shape mismatch " + to_string(a.shape()) + " vs " + to_string(p.shape()) + " vs " +
                     to_string(n.shape()));
  }
  if (a.dim(0) == 0 || n.dim(0) == 0) return std::nullopt;
  const Tensor an = ops::l2_normalize(a);
  const Tensor pn = ops::l2_normalize(p);
  const Tensor nn = ops::l2_normalize(n);
  const Tensor pos = ops::reshape(ops::sum(ops::mul(an, pn), -1), {a.dim(0), 1});
  const Tensor neg = ops::matmul(an, nn, false, true);
  const Tensor logits = ops::scale(ops::concat({pos, neg}, 1), 1.0f / tau);
  // log_softmax subtracts the row max before exponentiating.
  const Tensor log_prob = ops::slice(ops::log_softmax(logits, 1), 1, 0, 1);
  return ops::scale(ops::mean(log_prob), -1.0f);
}

std::optional<Tensor> cl_loss(const Tensor& u, const Tensor& v, std::span<const float> targets, float smoothing) {
  if (!(smoothing >= 0.0f && smoothing < 1.0f)) throw Error("cl_loss: smoothing must lie in [0, 1)");
  const Tensor a = as_rows(u);
  const Tensor b = as_rows(v);
  if (a.shape() != b.shape() || a.rank() != 2)
    throw ShapeError("cl_loss: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const auto pairs = a.dim(0);
  if (static_cast<std::int64_t>(targets.size()) != pairs)
    throw ShapeError("cl_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(pairs) + " pairs");
  if (pairs == 0) return std::nullopt;

  std::vector<float> t_same(static_cast<std::size_t>(pairs)), t_diff(static_cast<std::size_t>(pairs));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const float t = targets[i] * (1.0f - smoothing) + 0.5f * smoothing;
    t_same[i] = t;
    t_diff[i] = 1.0f - t;
  }
  const Tensor sim = cosine_similarity(a, b);
  // (1 + sim) / 2 and its complement (1 - sim) / 2, each clamped, so the
  // complement keeps full precision near sim = 1.
  const Tensor s_hat = ops::clamp(ops::scale(ops::add_scalar(sim, 1.0f), 0.5f), kProbFloor, 1.0f - kProbFloor);
  const Tensor s_comp =
      ops::clamp(ops::scale(ops::add_scalar(ops::scale(sim, -1.0f), 1.0f), 0.5f), kProbFloor, 1.0f - kProbFloor);
  const Tensor ll = ops::add(ops::mul(ops::log(s_hat), Tensor::from({pairs}, std::move(t_same))),
                             ops::mul(ops::log(s_comp), Tensor::from({pairs}, std::move(t_diff))));
  return ops::scale(ops::mean(ll), -1.0f);
}

std::optional<Tensor> soft_cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels, float smoothing) {
  if (logits.rank() < 1) throw ShapeError("soft_cross_entropy: logits need a class axis");
  const auto k = logits.dim(-1);
  const auto rows = logits.numel() / k;
  if (static_cast<std::int64_t>(labels.size()) != rows) {
    throw ShapeError("soft_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  const float off = smoothing / static_cast<float>(k);
  const float on = 1.0f - smoothing + off;
  std::vector<float> target(static_cast<std::size_t>(rows * k), 0.0f);
  std::int64_t valid = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto y = labels[static_cast<std::size_t>(r)];
    if (y == kIgnoreLabel) continue;
    if (y >= k) throw Error("soft_cross_entropy: label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
    ++valid;
    for (std::int64_t c = 0; c < k; ++c) target[r * k + c] = c == y ? on : off;
  }
  if (valid == 0) return std::nullopt;
  const Tensor lp = ops::log_softmax(ops::reshape(logits, {rows, k}), 1);
  const Tensor weighted = ops::sum(ops::mul(lp, Tensor::from({rows, k}, std::move(target))));
  return ops::scale(weighted, -1.0f / static_cast<float>(valid));
}

Tensor dice_loss(const Tensor& probs, std::span<const std::uint8_t> labels) {
  if (probs.rank() < 1) throw ShapeError("dice_loss: probabilities need a class axis");
  const auto k = probs.dim(-1);
  const auto rows = probs.numel() / k;
  if (static_cast<std::int64_t>(labels.size()) != rows)
    throw ShapeError("dice_loss: " + std::to_string(labels.size()) + " labels for probs " + to_string(probs.shape()));
  std::vector<float> onehot(static_cast<std::size_t>(rows * k), 0.0f);
  std::vector<float> valid(static_cast<std::size_t>(rows * k), 0.0f);
  std::vector<float> ysum(static_cast<std::size_t>(k), 0.0f);
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto y = labels[static_cast<std::size_t>(r)];
    if (y == kIgnoreLabel) continue;
    if (y >= k) throw Error("dice_loss: label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
    onehot[r * k + y] = 1.0f;
    ysum[y] += 1.0f;
    for (std::int64_t c = 0; c < k; ++c) valid[r * k + c] = 1.0f;
  }
  std::vector<float> present(static_cast<std::size_t>(k), 0.0f);
  float n_present = 0.0f;
  for (std::int64_t c = 0; c < k; ++c)
    if (ysum[c] > 0.0f) {
      present[c] = 1.0f;
      n_present += 1.0f;
    }
  if (n_present == 0.0f) return Tensor::scalar(0.0f);

  const Tensor p = ops::reshape(probs, {rows, k});
  const Tensor inter = ops::sum(ops::mul(p, Tensor::from({rows, k}, std::move(onehot))), 0);
  const Tensor psum = ops::sum(ops::mul(p, Tensor::from({rows, k}, std::move(valid))), 0);
  const Tensor num = ops::add_scalar(ops::scale(inter, 2.0f), 1.0f);
  const Tensor den = ops::add_scalar(ops::add(psum, Tensor::from({k}, std::move(ysum))), 1.0f);
  const Tensor score = ops::sum(ops::mul(ops::div(num, den), Tensor::from({k}, std::move(present))));
  return ops::add_scalar(ops::scale(score, -1.0f / n_present), 1.0f);
}

JointLoss joint_loss(const std::optional<Tensor>& ce, const Tensor& dice, const std::vector<ContrastiveTerm>& terms,
                     float clip, ClipGradient mode) {
  JointLoss out;
  std::vector<Tensor> contributing;
  for (const auto& t : terms) {
    if (!t.loss) continue;
    contributing.push_back(ops::reshape(*t.loss, {1}));
    out.breakdown.per_stage_class[{t.stage, t.cls}] = t.loss->item();
  }
  Tensor raw = contributing.empty() ? Tensor::scalar(0.0f) : ops::mean(ops::concat(contributing, 0));
  Tensor clipped = raw;
  const float r = raw.item();
  if (r > clip) {
    if (mode == ClipGradient::Block) {
      clipped = ops::clamp(raw, -std::numeric_limits<float>::infinity(), clip);
    } else {
      float s = clip / r;
      while (r * s > clip) s = std::nextafter(s, 0.0f);
      clipped = ops::scale(raw, s);
    }
  }
  Tensor total = ops::add(dice, clipped);
  if (ce) total = ops::add(*ce, total);

  out.breakdown.seg_ce = ce ? ce->item() : 0.0;
  out.breakdown.seg_dice = dice.item();
  out.breakdown.contrastive_raw = raw.item();
  out.breakdown.contrastive_clipped = clipped.item();
  out.breakdown.total = total.item();
  out.total = total;
  return out;
}

}  // namespace ct::losses
