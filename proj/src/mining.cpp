#include "ct/mining.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "ct/losses.hpp"

namespace ct::mining {

SampleSet gather_candidates(std::span<const patching::PatchLabelGrid> batch_grids, const Tensor& stage_embeddings,
                            std::uint8_t c, int stage, std::size_t cap, std::mt19937_64& rng) {
  if (cap == 0) throw Error("gather_candidates: cap must be positive");
  SampleSet set;
  set.stage = stage;
  set.cls = c;
  if (batch_grids.empty()) return set;
  const auto& spec = batch_grids.front().stage;
  if (stage_embeddings.rank() != 4 || stage_embeddings.dim(0) != static_cast<std::int64_t>(batch_grids.size()) ||
      stage_embeddings.dim(1) != spec.grid_h || stage_embeddings.dim(2) != spec.grid_w) {
    throw ShapeError("gather_candidates: embeddings " + to_string(stage_embeddings.shape()) + " do not match " +
                     std::to_string(batch_grids.size()) + " grids of " + std::to_string(spec.grid_h) + "x" +
                     std::to_string(spec.grid_w));
  }
  const std::int64_t per_image = static_cast<std::int64_t>(spec.grid_h) * spec.grid_w;
  for (std::size_t b = 0; b < batch_grids.size(); ++b) {
    const auto& grid = batch_grids[b];
    if (grid.stage.grid_h != spec.grid_h || grid.stage.grid_w != spec.grid_w)
      throw ShapeError("gather_candidates: grids in one batch must share a stage geometry");
    const auto ref = [&](patching::GridIndex g) {
      return PatchRef{static_cast<int>(b), g, static_cast<std::int64_t>(b) * per_image + grid.flat(g)};
    };
    for (auto g : patching::positive_indices(grid, c)) set.positives.push_back(ref(g));
    for (auto g : patching::negative_indices(grid, c)) set.negatives.push_back(ref(g));
  }
  std::shuffle(set.positives.begin(), set.positives.end(), rng);
  std::shuffle(set.negatives.begin(), set.negatives.end(), rng);
  if (set.positives.size() > cap) set.positives.resize(cap);
  if (set.negatives.size() > cap) set.negatives.resize(cap);
  return set;
}

Embeddings rows_of(const Tensor& stacked, std::span<const PatchRef> refs) {
  const auto n = stacked.dim(-1);
  const auto rows = stacked.numel() / n;
  Embeddings out;
  out.reserve(refs.size());
  for (const auto& r : refs) {
    if (r.row < 0 || r.row >= rows) throw ShapeError("rows_of: row " + std::to_string(r.row) + " out of range");
    out.push_back(stacked.values().subspan(static_cast<std::size_t>(r.row * n), static_cast<std::size_t>(n)));
  }
  return out;
}

namespace {

std::vector<Pair> keep_half(std::vector<Pair> pairs, bool most_similar) {
  if (pairs.empty()) return pairs;
  std::stable_sort(pairs.begin(), pairs.end(), [most_similar](const Pair& a, const Pair& b) {
    return most_similar ? a.similarity > b.similarity : a.similarity < b.similarity;
  });
  pairs.resize(std::max<std::size_t>(1, pairs.size() / 2));
  return pairs;
}

}  // namespace

std::vector<Pair> select_hardest_negatives(std::vector<Pair> pairs) { return keep_half(std::move(pairs), true); }
std::vector<Pair> select_hardest_positives(std::vector<Pair> pairs) { return keep_half(std::move(pairs), false); }

std::vector<Pair> mine_hard_negatives(const Embeddings& positives, const Embeddings& negatives, std::size_t pair_budget,
                                      std::mt19937_64& rng) {
  if (positives.empty() || negatives.empty() || pair_budget == 0) return {};
  std::uniform_int_distribution<std::size_t> pick_pos(0, positives.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_neg(0, negatives.size() - 1);
  std::vector<Pair> pairs(pair_budget);
  for (auto& p : pairs) {
    p.first = pick_pos(rng);
    p.second = pick_neg(rng);
    p.similarity = losses::cosine_similarity(positives[p.first], negatives[p.second]);
  }
  return select_hardest_negatives(std::move(pairs));
}

std::vector<Pair> mine_hard_positives(const Embeddings& positives, std::mt19937_64& rng) {
  if (positives.size() < 2) return {};
  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = order.size() / 2;
  std::vector<Pair> pairs(half);
  for (std::size_t k = 0; k < half; ++k) {
    pairs[k].first = order[k];
    pairs[k].second = order[half + k];
    pairs[k].similarity = losses::cosine_similarity(positives[order[k]], positives[order[half + k]]);
  }
  return select_hardest_positives(std::move(pairs));
}

}  // namespace ct::mining
