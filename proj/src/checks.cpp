#include "ct/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "ct/losses.hpp"
#include "ct/mining.hpp"
#include "ct/ops.hpp"
#include "ct/patching.hpp"
#include "ct/raster.hpp"

namespace ct::checks {

namespace {

using V = std::vector<Tensor>;

GradCheckCase make_case(std::string name, std::vector<Shape> shapes, std::function<Tensor(const V&)> fn) {
  GradCheckCase c;
  c.name = std::move(name);
  c.input_shapes = std::move(shapes);
  c.fn = std::move(fn);
  return c;
}

template <typename F>
CheckResult timed(std::string name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  r.name = std::move(name);
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Oracle written straight from the pixel definition.
struct BrutePatch {
  bool positive;
  bool negative;
};

BrutePatch brute(const Mask& m, int p, int gi, int gj, std::uint8_t c) {
  bool all_c = true, any_c = false, any_label = false;
  for (int i = gi * p; i < (gi + 1) * p; ++i)
    for (int j = gj * p; j < (gj + 1) * p; ++j) {
      const auto id = m.at(i, j);
      all_c = all_c && id == c;
      any_c = any_c || id == c;
      any_label = any_label || id != kIgnoreLabel;
    }
  return {all_c, any_label && !any_c};
}

Mask random_mask(int side, int classes, std::mt19937_64& rng) {
  Mask m(side, side);
  const int block = std::uniform_int_distribution<int>(1, 4)(rng);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  for (int r = 0; r < side; r += block)
    for (int c = 0; c < side; c += block) {
      const auto id = static_cast<std::uint8_t>(cls(rng));
      for (int i = r; i < std::min(side, r + block); ++i)
        for (int j = c; j < std::min(side, c + block); ++j) m.at(i, j) = id;
    }
  std::bernoulli_distribution flip(0.03), ignore(0.01);
  for (auto& id : m.ids) {
    if (flip(rng)) id = static_cast<std::uint8_t>(cls(rng));
    if (ignore(rng)) id = kIgnoreLabel;
  }
  return m;
}

double cosine_ref(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

std::vector<GradCheckCase> loss_grad_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back(make_case("cosine_similarity", {{3, 5}, {3, 5}},
                            [](const V& x) { return losses::cosine_similarity(x[0], x[1]); }));
  for (float tau : {0.07f, 0.2f}) {
    cases.push_back(make_case("info_nce(tau=" + std::to_string(tau).substr(0, 4) + ")", {{3, 4}, {3, 4}, {5, 4}},
                              [tau](const V& x) { return *losses::info_nce(x[0], x[1], x[2], tau); }));
    // Sharper softmax at small tau, so less room for truncation error.
    cases.back().eps = tau < 0.1f ? 2e-3f : 5e-3f;
  }
  cases.push_back(make_case("cl_loss", {{4, 6}, {4, 6}}, [](const V& x) {
    static const std::vector<float> t{1, 0, 1, 0};
    return *losses::cl_loss(x[0], x[1], t, 0.1f);
  }));
  cases.back().lo = -2.0f;
  cases.back().hi = 2.0f;
  cases.push_back(make_case("soft_cross_entropy", {{2, 3, 4}}, [](const V& x) {
    static const std::vector<std::uint8_t> y{0, 3, kIgnoreLabel, 1, 2, 2};
    return *losses::soft_cross_entropy(x[0], y, 0.1f);
  }));
  cases.back().lo = -3.0f;
  cases.back().hi = 3.0f;
  cases.push_back(make_case("dice_loss", {{2, 4, 3}}, [](const V& x) {
    static const std::vector<std::uint8_t> y{0, 0, 1, 1, 2, 0, kIgnoreLabel, 1};
    return losses::dice_loss(ops::softmax(x[0], -1), y);
  }));
  cases.back().lo = -2.0f;
  cases.back().hi = 2.0f;
  cases.push_back(make_case("joint_loss(unclipped)", {{}, {}, {}, {}}, [](const V& x) {
    return losses::joint_loss(x[0], x[1], {{1, 0, x[2]}, {2, 1, x[3]}, {3, 2, std::nullopt}}, 5.0f).total;
  }));
  cases.push_back(make_case("joint_loss(clipped, block)", {{}, {}, {}, {}}, [](const V& x) {
    return losses::joint_loss(x[0], x[1], {{1, 0, x[2]}, {2, 1, x[3]}}, 0.2f, losses::ClipGradient::Block).total;
  }));
  cases.back().lo = 0.5f;
  cases.back().hi = 1.0f;
  for (auto& c : cases)
    if (c.name.rfind("info_nce", 0) != 0) c.eps = 5e-3f;
  return cases;
}

CheckResult gradient_suite(int trials, std::uint64_t seed) {
  return timed("gradient suite", [&](CheckResult& r) {
    auto cases = op_grad_cases();
    for (auto& c : loss_grad_cases()) cases.push_back(std::move(c));
    std::ostringstream failures;
    double worst = 0.0;
    int failed = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto res = run_grad_check(cases[i], trials, seed + i);
      worst = std::max(worst, res.worst_error);
      if (!res.passed) {
        ++failed;
        failures << " " << res.name << " (" << res.detail << ")";
      }
    }
    std::ostringstream d;
    d << cases.size() << " cases x " << trials << " trials, worst relative error " << worst;
    if (failed) d << "; failed:" << failures.str();
    r.passed = failed == 0;
    r.detail = d.str();
  });
}

CheckResult sampling_oracle(int masks, std::uint64_t seed) {
  return timed("sampling oracle", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::int64_t compared = 0, mismatches = 0;
    for (int t = 0; t < masks; ++t) {
      const int side = 4 * std::uniform_int_distribution<int>(1, 4)(rng);
      const int classes = std::uniform_int_distribution<int>(2, 6)(rng);
      const int batch = std::uniform_int_distribution<int>(1, 3)(rng);
      std::vector<Mask> batch_masks;
      for (int b = 0; b < batch; ++b) batch_masks.push_back(random_mask(side, classes, rng));
      std::vector<int> sizes;
      for (int p = 1; p <= side && side % p == 0; p *= 2) sizes.push_back(p);
      for (const auto& spec : patching::stage_specs(side, side, sizes)) {
        const int p = spec.patch_size;
        std::vector<patching::PatchLabelGrid> grids;
        for (const auto& m : batch_masks) grids.push_back(patching::build_patch_grid(m, spec));
        const Tensor emb = Tensor::zeros({batch, spec.grid_h, spec.grid_w, 1});
        for (int c = 0; c < classes; ++c) {
          const auto id = static_cast<std::uint8_t>(c);
          std::set<std::tuple<int, int, int>> want_pos, want_neg;
          for (int b = 0; b < batch; ++b) {
            std::vector<patching::GridIndex> bp, bn;
            for (int gi = 0; gi < spec.grid_h; ++gi)
              for (int gj = 0; gj < spec.grid_w; ++gj) {
                const auto o = brute(batch_masks[b], p, gi, gj, id);
                if (o.positive) {
                  bp.push_back({gi, gj});
                  want_pos.insert({b, gi, gj});
                }
                if (o.negative) {
                  bn.push_back({gi, gj});
                  want_neg.insert({b, gi, gj});
                }
              }
            compared += 2;
            mismatches += patching::positive_indices(grids[b], id) != bp;
            mismatches += patching::negative_indices(grids[b], id) != bn;
          }
          // Uncapped gather must return the oracle sets exactly; a capped one
          // must return a subset of the right size.
          for (std::size_t cap : {std::size_t{1} << 20, std::size_t{1 + rng() % 8}}) {
            const auto set = mining::gather_candidates(grids, emb, id, spec.stage, cap, rng);
            std::set<std::tuple<int, int, int>> got_pos, got_neg;
            bool rows_ok = true;
            const auto per_image = static_cast<std::int64_t>(spec.grid_h) * spec.grid_w;
            for (const auto& ref : set.positives) {
              got_pos.insert({ref.image, ref.cell.row, ref.cell.col});
              rows_ok = rows_ok && ref.row == ref.image * per_image + ref.cell.row * spec.grid_w + ref.cell.col;
            }
            for (const auto& ref : set.negatives) {
              got_neg.insert({ref.image, ref.cell.row, ref.cell.col});
              rows_ok = rows_ok && ref.row == ref.image * per_image + ref.cell.row * spec.grid_w + ref.cell.col;
            }
            const bool subset = std::includes(want_pos.begin(), want_pos.end(), got_pos.begin(), got_pos.end()) &&
                                std::includes(want_neg.begin(), want_neg.end(), got_neg.begin(), got_neg.end());
            const bool sizes_ok = got_pos.size() == std::min(cap, want_pos.size()) &&
                                  got_neg.size() == std::min(cap, want_neg.size()) &&
                                  got_pos.size() == set.positives.size() && got_neg.size() == set.negatives.size();
            ++compared;
            mismatches += !(subset && sizes_ok && rows_ok);
          }
        }
      }
    }
    r.passed = mismatches == 0;
    r.detail = std::to_string(masks) + " random masks, " + std::to_string(compared) + " comparisons, " +
               std::to_string(mismatches) + " mismatches";
  });
}

CheckResult mining_oracle(int trials, std::uint64_t seed) {
  return timed("mining oracle", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal;
    int bad = 0;
    for (int t = 0; t < trials; ++t) {
      const auto np = std::uniform_int_distribution<std::size_t>(2, 64)(rng);
      const auto nn = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
      const auto budget = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
      const int n = std::uniform_int_distribution<int>(2, 8)(rng);
      std::vector<std::vector<float>> pos(np, std::vector<float>(static_cast<std::size_t>(n)));
      std::vector<std::vector<float>> neg(nn, std::vector<float>(static_cast<std::size_t>(n)));
      for (auto* rows : {&pos, &neg})
        for (auto& row : *rows)
          for (auto& v : row) v = normal(rng);
      mining::Embeddings pe(pos.begin(), pos.end()), ne(neg.begin(), neg.end());
      const std::uint64_t stream = rng();

      std::mt19937_64 r1(stream), r2(stream);
      const auto negs = mining::mine_hard_negatives(pe, ne, budget, r1);
      std::uniform_int_distribution<std::size_t> pick_p(0, np - 1), pick_n(0, nn - 1);
      std::vector<double> all;
      for (std::size_t k = 0; k < budget; ++k) {
        const auto a = pick_p(r2);
        const auto b = pick_n(r2);
        all.push_back(cosine_ref(pos[a], neg[b]));
      }
      std::sort(all.begin(), all.end(), std::greater<>());
      bool ok = negs.size() == std::max<std::size_t>(1, budget / 2);
      for (std::size_t k = 0; ok && k < negs.size(); ++k)
        ok = std::abs(negs[k].similarity - all[k]) < 1e-5 &&
             std::abs(negs[k].similarity - cosine_ref(pos[negs[k].first], neg[negs[k].second])) < 1e-5;

      const auto poss = mining::mine_hard_positives(pe, r1);
      std::vector<std::size_t> order(np);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), r2);
      std::vector<double> halves;
      for (std::size_t k = 0; k < np / 2; ++k) halves.push_back(cosine_ref(pos[order[k]], pos[order[np / 2 + k]]));
      std::sort(halves.begin(), halves.end());
      ok = ok && poss.size() == std::max<std::size_t>(1, halves.size() / 2);
      for (std::size_t k = 0; ok && k < poss.size(); ++k) ok = std::abs(poss[k].similarity - halves[k]) < 1e-5;
      bad += !ok;
    }
    r.passed = bad == 0;
    r.detail = std::to_string(trials) + " trials, " + std::to_string(bad) + " mismatches";
  });
}

CheckResult patch_arithmetic(int side, std::int64_t expected) {
  return timed("patch arithmetic", [&](CheckResult& r) {
    const auto specs = patching::default_stage_specs(side);
    const auto total = patching::total_patch_count(specs);
    std::ostringstream d;
    d << side << "px:";
    for (const auto& s : specs) d << " " << s.grid_h << "x" << s.grid_w;
    d << " = " << total << " patches";
    r.passed = total == expected && total > 20000;
    r.detail = d.str();
  });
}

std::vector<CheckResult> run_all() {
  return {gradient_suite(), sampling_oracle(), mining_oracle(), patch_arithmetic()};
}

}  // namespace ct::checks
