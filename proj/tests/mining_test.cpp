#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "ct/mining.hpp"

namespace ct::mining {
namespace {

using patching::GridIndex;

std::vector<float> unit_at_angle(double degrees) {
  const double r = degrees * 3.14159265358979323846 / 180.0;
  return {static_cast<float>(std::cos(r)), static_cast<float>(std::sin(r))};
}

Embeddings spans(const std::vector<std::vector<float>>& rows) {
  Embeddings out;
  for (const auto& r : rows) out.emplace_back(r);
  return out;
}

std::vector<std::vector<float>> random_rows(std::size_t count, int n, std::mt19937_64& rng) {
  std::normal_distribution<float> d;
  std::vector<std::vector<float>> rows(count, std::vector<float>(static_cast<std::size_t>(n)));
  for (auto& r : rows)
    for (auto& v : r) v = d(rng);
  return rows;
}

TEST(Mining, HardNegativesKeepUpperHalf) {
  std::vector<Pair> pairs{{0, 0, 0.9f}, {1, 1, 0.1f}, {2, 2, 0.5f}, {3, 3, -0.2f}};
  const auto kept = select_hardest_negatives(pairs);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_FLOAT_EQ(kept[0].similarity, 0.9f);
  EXPECT_FLOAT_EQ(kept[1].similarity, 0.5f);
}

TEST(Mining, HardPositivesKeepLowerHalf) {
  std::vector<Pair> pairs{{0, 1, 0.99f}, {2, 3, 0.2f}};
  const auto kept = select_hardest_positives(pairs);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_FLOAT_EQ(kept[0].similarity, 0.2f);
}

TEST(Mining, HardNegativesFromEmbeddings) {
  // Each negative sits at a fixed angle from the single positive, so the
  // pair similarity is cos(angle) regardless of which pairs are drawn.
  const std::vector<std::vector<float>> pos{unit_at_angle(0)};
  const std::vector<std::vector<float>> neg{unit_at_angle(10), unit_at_angle(100)};
  std::mt19937_64 rng(3);
  const auto kept = mine_hard_negatives(spans(pos), spans(neg), 64, rng);
  ASSERT_EQ(kept.size(), 32u);
  // At least one draw hits the close negative, so the kept half starts there.
  EXPECT_NEAR(kept.front().similarity, std::cos(10 * 3.14159265 / 180), 1e-5);
}

TEST(Mining, IdenticalVectorsAllSimilarityOne) {
  const std::vector<std::vector<float>> rows(6, std::vector<float>{0.3f, -0.4f, 1.2f});
  std::mt19937_64 rng(1);
  const auto negs = mine_hard_negatives(spans(rows), spans(rows), 10, rng);
  EXPECT_EQ(negs.size(), 5u);
  for (const auto& p : negs) EXPECT_NEAR(p.similarity, 1.0f, 1e-6);
  const std::vector<std::vector<float>> two(2, std::vector<float>{1.0f, 2.0f});
  const auto poss = mine_hard_positives(spans(two), rng);
  ASSERT_EQ(poss.size(), 1u);
  EXPECT_NEAR(poss[0].similarity, 1.0f, 1e-6);
}

TEST(Mining, EmptyInputsSignalSkip) {
  std::mt19937_64 rng(1);
  const std::vector<std::vector<float>> one{{1.0f, 0.0f}};
  EXPECT_TRUE(mine_hard_negatives(spans(one), {}, 16, rng).empty());
  EXPECT_TRUE(mine_hard_negatives({}, spans(one), 16, rng).empty());
  EXPECT_TRUE(mine_hard_positives(spans(one), rng).empty());
  EXPECT_TRUE(mine_hard_positives({}, rng).empty());
}

TEST(Mining, HardPositiveCountIsDoubleHalving) {
  std::mt19937_64 rng(9);
  for (std::size_t n = 2; n <= 40; ++n) {
    const auto rows = random_rows(n, 4, rng);
    const auto kept = mine_hard_positives(spans(rows), rng);
    EXPECT_EQ(kept.size(), std::max<std::size_t>(1, (n / 2) / 2)) << n;
  }
}

// Full-sort oracle: recompute every pair similarity in double and check the
// survivors are exactly the extreme half.
TEST(Mining, SurvivorsMatchFullSortOracle) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto np = std::uniform_int_distribution<std::size_t>(2, 64)(rng);
    const auto nn = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const auto budget = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const auto pos = random_rows(np, 5, rng);
    const auto neg = random_rows(nn, 5, rng);
    const auto cosine = [](const std::vector<float>& a, const std::vector<float>& b) {
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * b[i];
        aa += double(a[i]) * a[i];
        bb += double(b[i]) * b[i];
      }
      return ab / std::sqrt(aa * bb);
    };

    std::mt19937_64 r1(trial), r2(trial);
    const auto negs = mine_hard_negatives(spans(pos), spans(neg), budget, r1);
    // Replay the draws to know every pair that was formed.
    std::uniform_int_distribution<std::size_t> pp(0, np - 1), pn(0, nn - 1);
    std::vector<double> all;
    for (std::size_t k = 0; k < budget; ++k) {
      const auto a = pp(r2);
      const auto b = pn(r2);
      all.push_back(cosine(pos[a], neg[b]));
    }
    std::sort(all.begin(), all.end(), std::greater<>());
    ASSERT_EQ(negs.size(), std::max<std::size_t>(1, budget / 2));
    for (std::size_t k = 0; k < negs.size(); ++k) {
      EXPECT_NEAR(negs[k].similarity, all[k], 1e-5);
      EXPECT_NEAR(negs[k].similarity, cosine(pos[negs[k].first], neg[negs[k].second]), 1e-5);
    }
    if (negs.size() < all.size()) EXPECT_GE(negs.back().similarity + 1e-6, all[negs.size()]);

    const auto poss = mine_hard_positives(spans(pos), r1);
    std::vector<double> sims;
    std::set<std::size_t> used;
    for (const auto& p : poss) {
      EXPECT_NE(p.first, p.second);
      EXPECT_TRUE(used.insert(p.first).second);
      EXPECT_TRUE(used.insert(p.second).second);
      sims.push_back(cosine(pos[p.first], pos[p.second]));
      EXPECT_NEAR(p.similarity, sims.back(), 1e-5);
    }
    EXPECT_TRUE(std::is_sorted(poss.begin(), poss.end(),
                               [](const Pair& a, const Pair& b) { return a.similarity < b.similarity; }));
  }
}

TEST(Mining, HardPositivesAreLowerMedianOfFormedPairs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = std::uniform_int_distribution<std::size_t>(2, 64)(rng);
    const auto pos = random_rows(n, 3, rng);
    std::mt19937_64 r1(trial), r2(trial);
    const auto kept = mine_hard_positives(spans(pos), r1);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), r2);
    std::vector<float> all;
    for (std::size_t k = 0; k < n / 2; ++k) {
      double ab = 0, aa = 0, bb = 0;
      const auto& a = pos[order[k]];
      const auto& b = pos[order[n / 2 + k]];
      for (int i = 0; i < 3; ++i) {
        ab += double(a[i]) * b[i];
        aa += double(a[i]) * a[i];
        bb += double(b[i]) * b[i];
      }
      all.push_back(static_cast<float>(ab / std::sqrt(aa * bb)));
    }
    std::sort(all.begin(), all.end());
    ASSERT_EQ(kept.size(), std::max<std::size_t>(1, all.size() / 2));
    for (std::size_t k = 0; k < kept.size(); ++k) EXPECT_NEAR(kept[k].similarity, all[k], 1e-5);
  }
}

std::vector<patching::PatchLabelGrid> grids_for(const std::vector<Mask>& masks, int p) {
  std::vector<patching::PatchLabelGrid> out;
  for (const auto& m : masks) out.push_back(patching::build_patch_grid(m, {1, p, m.height / p, m.width / p}));
  return out;
}

TEST(Mining, UniformBatchGivesOnlyPositives) {
  const std::vector<Mask> masks{Mask(8, 8, 2), Mask(8, 8, 2)};
  const auto grids = grids_for(masks, 2);
  const Tensor emb = Tensor::zeros({2, 4, 4, 3});
  for (std::size_t cap : {5u, 32u, 100u}) {
    std::mt19937_64 rng(1);
    const auto set = gather_candidates(grids, emb, 2, 1, cap, rng);
    EXPECT_TRUE(set.negatives.empty());
    EXPECT_EQ(set.positives.size(), std::min<std::size_t>(cap, 32));
  }
}

TEST(Mining, GatherIsDeterministic) {
  std::mt19937_64 mrng(4);
  std::vector<Mask> masks;
  for (int b = 0; b < 3; ++b) {
    Mask m(8, 8);
    for (auto& id : m.ids) id = static_cast<std::uint8_t>(mrng() % 3);
    masks.push_back(m);
  }
  const auto grids = grids_for(masks, 1);
  const Tensor emb = Tensor::zeros({3, 8, 8, 2});
  std::mt19937_64 a(42), b(42);
  EXPECT_EQ(gather_candidates(grids, emb, 1, 1, 16, a), gather_candidates(grids, emb, 1, 1, 16, b));
}

TEST(Mining, ProvenanceValidatesAgainstPatching) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = std::uniform_int_distribution<int>(2, 5)(rng);
    const int batch = std::uniform_int_distribution<int>(1, 3)(rng);
    std::vector<Mask> masks;
    for (int b = 0; b < batch; ++b) {
      Mask m(8, 8);
      for (int r = 0; r < 8; r += 2)
        for (int c = 0; c < 8; c += 2) {
          const auto id = static_cast<std::uint8_t>(rng() % static_cast<unsigned>(classes));
          m.at(r, c) = m.at(r + 1, c) = m.at(r, c + 1) = id;
          m.at(r + 1, c + 1) = (rng() % 4 == 0) ? static_cast<std::uint8_t>(rng() % classes) : id;
        }
      masks.push_back(m);
    }
    const auto grids = grids_for(masks, 2);
    const Tensor emb = Tensor::zeros({batch, 4, 4, 2});
    for (int c = 0; c < classes; ++c) {
      const auto cap = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
      const auto set = gather_candidates(grids, emb, static_cast<std::uint8_t>(c), 1, cap, rng);
      std::size_t pos_total = 0, neg_total = 0;
      for (int b = 0; b < batch; ++b) {
        pos_total += patching::positive_indices(grids[b], static_cast<std::uint8_t>(c)).size();
        neg_total += patching::negative_indices(grids[b], static_cast<std::uint8_t>(c)).size();
      }
      EXPECT_EQ(set.positives.size(), std::min(cap, pos_total));
      EXPECT_EQ(set.negatives.size(), std::min(cap, neg_total));
      std::set<std::int64_t> rows;
      for (const auto& r : set.positives) {
        const auto& e = grids[r.image].at(r.cell);
        ASSERT_TRUE(e.homogeneous_class.has_value());
        EXPECT_EQ(*e.homogeneous_class, c);
        EXPECT_EQ(r.row, r.image * 16 + grids[r.image].flat(r.cell));
        EXPECT_TRUE(rows.insert(r.row).second);
      }
      for (const auto& r : set.negatives) {
        EXPECT_FALSE(grids[r.image].at(r.cell).classes_present.test(c));
        EXPECT_EQ(r.row, r.image * 16 + grids[r.image].flat(r.cell));
        EXPECT_TRUE(rows.insert(r.row).second);
      }
    }
  }
}

TEST(Mining, GatherRejectsMismatchedEmbeddings) {
  const std::vector<Mask> masks{Mask(8, 8, 1)};
  const auto grids = grids_for(masks, 2);
  std::mt19937_64 rng(1);
  EXPECT_THROW(gather_candidates(grids, Tensor::zeros({1, 2, 2, 3}), 1, 1, 8, rng), ShapeError);
  EXPECT_THROW(gather_candidates(grids, Tensor::zeros({1, 4, 4, 3}), 1, 1, 0, rng), Error);
}

TEST(Mining, RowsOfReadsStackedEmbeddings) {
  const Tensor emb = Tensor::from({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<PatchRef> refs{{1, {0, 1}, 3}, {0, {0, 0}, 0}};
  const auto rows = rows_of(emb, refs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][0], 7);
  EXPECT_EQ(rows[1][1], 2);
  const std::vector<PatchRef> bad{{0, {0, 0}, 4}};
  EXPECT_THROW(rows_of(emb, bad), ShapeError);
}

}  // namespace
}  // namespace ct::mining
