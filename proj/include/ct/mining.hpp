#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ct/patching.hpp"
#include "ct/tensor.hpp"

namespace ct::mining {

inline constexpr std::size_t kDefaultCandidateCap = 256;
inline constexpr std::size_t kDefaultPairBudget = 128;

// One patch embedding: where it came from and which row of the stacked
// stage embeddings [B * h * w, n] holds it.
struct PatchRef {
  int image = 0;
  patching::GridIndex cell;
  std::int64_t row = 0;
  bool operator==(const PatchRef&) const = default;
};

struct SampleSet {
  int stage = 1;
  std::uint8_t cls = 0;
  std::vector<PatchRef> positives;
  std::vector<PatchRef> negatives;
  bool operator==(const SampleSet&) const = default;
};

// Pools positive and negative patches for class c over every image in the
// batch, shuffles each pool and truncates it to `cap`. `stage_embeddings` is
// F_s as [B, h, w, n] and only fixes the geometry of PatchRef::row.
SampleSet gather_candidates(std::span<const patching::PatchLabelGrid> batch_grids, const Tensor& stage_embeddings,
                            std::uint8_t c, int stage, std::size_t cap, std::mt19937_64& rng);

// Embedding references: one span of n values per sample.
using Embeddings = std::vector<std::span<const float>>;
Embeddings rows_of(const Tensor& stacked, std::span<const PatchRef> refs);

struct Pair {
  std::size_t first = 0;   // index into the positive sequence
  std::size_t second = 0;  // index into the negative (or second positive) sequence
  float similarity = 0.0f;
};

// Keeps the most similar half (floor, at least one) of the pairs.
std::vector<Pair> select_hardest_negatives(std::vector<Pair> pairs);
// Keeps the least similar half (floor, at least one) of the pairs.
std::vector<Pair> select_hardest_positives(std::vector<Pair> pairs);

// Draws `pair_budget` random (positive, negative) pairs and keeps the most
// similar half. Empty input yields no pairs.
std::vector<Pair> mine_hard_negatives(const Embeddings& positives, const Embeddings& negatives, std::size_t pair_budget,
                                      std::mt19937_64& rng);

// Shuffles the positives, pairs the two halves elementwise and keeps the least
// similar half. Fewer than two positives yields no pairs.
std::vector<Pair> mine_hard_positives(const Embeddings& positives, std::mt19937_64& rng);

}  // namespace ct::mining
