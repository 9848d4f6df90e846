#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ct/checks.hpp"
#include "ct/config.hpp"
#include "ct/harness.hpp"

using namespace ct;
using namespace ct::harness;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ct_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

data::Sample sample_from_mask(Mask mask, std::uint64_t seed, std::string id) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 255);
  data::Sample s;
  s.id = std::move(id);
  s.image.height = mask.height;
  s.image.width = mask.width;
  s.image.values.resize(static_cast<std::size_t>(mask.height) * mask.width * 3);
  for (auto& v : s.image.values) v = static_cast<float>(level(rng)) / 255.0f;
  s.mask = std::move(mask);
  return s;
}

// 1-pixel checkerboard of classes a and b: no patch of any stage is homogeneous.
data::Sample checkerboard(int side, std::uint8_t a, std::uint8_t b, std::uint64_t seed) {
  Mask m(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) m.at(y, x) = ((x + y) % 2) ? a : b;
  return sample_from_mask(std::move(m), seed, "checker" + std::to_string(seed));
}

ExperimentConfig small_config(ContrastiveMode mode) {
  auto cfg = load_config(nullptr, {"train.lr=1e-3"});
  cfg.train.contrastive_mode = mode;
  return cfg;
}

std::vector<const data::Sample*> ptrs(const std::vector<data::Sample>& v) {
  std::vector<const data::Sample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

}  // namespace

TEST(Evaluate, TwoByTwoToy) {
  const auto ev = evaluate_predictions({{0, 1, 1, 1}}, {{0, 0, 1, 1}}, 2, {0, 1});
  EXPECT_DOUBLE_EQ(ev.iou[0], 1.0 / 2.0);
  EXPECT_DOUBLE_EQ(ev.iou[1], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(ev.miou, 7.0 / 12.0);
  EXPECT_EQ(ev.tp[1], 2);
  EXPECT_EQ(ev.fp[1], 1);
  EXPECT_EQ(ev.fn[0], 1);
  EXPECT_DOUBLE_EQ(ev.pixel_accuracy, 0.75);
}

TEST(Evaluate, IdentityAndDisjoint) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<std::uint8_t> truth(500);
  for (auto& t : truth) t = static_cast<std::uint8_t>(cls(rng));
  const auto same = evaluate_predictions({truth}, {truth}, 4, {0, 1, 2, 3});
  for (double v : same.iou) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(same.miou, 1.0);

  std::vector<std::uint8_t> shifted = truth;
  for (auto& t : shifted) t = static_cast<std::uint8_t>((t + 1) % 4);
  const auto off = evaluate_predictions({shifted}, {truth}, 4, {0, 1, 2, 3});
  for (double v : off.iou) EXPECT_EQ(v, 0.0);
}

TEST(Evaluate, AbsentClassIsUndefinedAndFlagged) {
  const auto ev = evaluate_predictions({{0, 1, 1, 1}}, {{0, 0, 1, 1}}, 3, {0, 1, 2});
  EXPECT_FALSE(ev.defined[2]);
  EXPECT_TRUE(std::isnan(ev.iou[2]));
  ASSERT_EQ(ev.excluded, std::vector<int>{2});
  EXPECT_DOUBLE_EQ(ev.miou, 7.0 / 12.0);
}

TEST(Evaluate, IgnoreLabelSkipped) {
  const auto ev = evaluate_predictions({{0, 1, 0}}, {{0, 1, kIgnoreLabel}}, 2, {0, 1});
  EXPECT_EQ(ev.miou, 1.0);
  EXPECT_EQ(ev.fp[0], 0);
}

TEST(Evaluate, UntrainedModelNearChance) {
  auto cfg = load_config(nullptr);
  const auto test = data::generate_samples(cfg.scene(), 8, 1, "test");
  const model::SegmentationModel m(cfg.model, 5);
  const auto ev = evaluate(m, test, cfg.miou_class_ids());
  EXPECT_LT(ev.miou, 0.3);
}

TEST(Evaluate, RejectsEmptyAndMismatched) {
  EXPECT_THROW(evaluate_predictions({}, {}, 2, {0}), Error);
  EXPECT_THROW(evaluate_predictions({{0}}, {{0, 1}}, 2, {0}), ShapeError);
}

TEST(Summarize, PopulationStd) {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(1.25));
  EXPECT_EQ(summarize({0.4321}).std, 0.0);
}

TEST(TrainStep, OffModeHasNoContrastiveLoss) {
  const auto cfg = small_config(ContrastiveMode::Off);
  Trainer tr(cfg, 1);
  const auto train = data::generate_samples(cfg.scene(), 4, 0, "t");
  for (int i = 0; i < 3; ++i) {
    const auto log = tr.train_step(ptrs(train));
    EXPECT_EQ(log.loss.contrastive_raw, 0.0);
    EXPECT_EQ(log.loss.contrastive_clipped, 0.0);
    EXPECT_TRUE(log.terms.empty());
  }
}

TEST(TrainStep, EmptyBatchRejected) {
  Trainer tr(small_config(ContrastiveMode::Cl), 1);
  EXPECT_THROW(tr.train_step({}), Error);
}

TEST(TrainStep, DeterministicAcrossTrainers) {
  for (auto mode : {ContrastiveMode::InfoNce, ContrastiveMode::Cl}) {
    const auto cfg = small_config(mode);
    const auto train = data::generate_samples(cfg.scene(), 4, 0, "t");
    Trainer a(cfg, 3), b(cfg, 3);
    for (int i = 0; i < 3; ++i) {
      const auto la = a.train_step(ptrs(train)), lb = b.train_step(ptrs(train));
      EXPECT_EQ(la.loss.total, lb.loss.total);
      EXPECT_EQ(la.loss.contrastive_raw, lb.loss.contrastive_raw);
      EXPECT_EQ(la.grad_norm_pre, lb.grad_norm_pre);
      EXPECT_EQ(la.terms, lb.terms);
    }
  }
}

TEST(TrainStep, ClippingContractHolds) {
  for (auto mode : {ContrastiveMode::InfoNce, ContrastiveMode::Cl}) {
    for (auto grad : {losses::ClipGradient::Block, losses::ClipGradient::Rescale}) {
      auto cfg = small_config(mode);
      cfg.train.contrastive_clip_gradient = grad;
      const auto train = data::generate_samples(cfg.scene(), 4, 0, "t");
      Trainer tr(cfg, 2);
      for (int i = 0; i < 4; ++i) {
        const auto log = tr.train_step(ptrs(train));
        EXPECT_LE(log.loss.contrastive_clipped, 1.0);
        EXPECT_LE(log.grad_norm_post, 1.0 + 1e-6);
        if (!log.clipped) EXPECT_NEAR(log.grad_norm_post, log.grad_norm_pre, 1e-5 * log.grad_norm_pre);
      }
    }
  }
}

// Expected (stage, class) terms recomputed from the masks alone.
TEST(TrainStep, TermSetMatchesBruteForce) {
  for (auto mode : {ContrastiveMode::InfoNce, ContrastiveMode::Cl}) {
    for (int disabled : {-1, 1}) {
      auto cfg = small_config(mode);
      cfg.train.candidate_cap = 100000;
      if (disabled >= 0) cfg.train.stage_enable[static_cast<std::size_t>(disabled)] = false;
      for (std::uint64_t stream : {0u, 7u, 9u}) {
        const auto batch = data::generate_samples(cfg.scene(), 2, stream, "b");
        std::set<std::pair<int, int>> expected;
        for (int s = 0; s < 4; ++s) {
          if (s == disabled) continue;
          const int p = 4 << s;
          for (int c = 0; c < 6; ++c) {
            bool in_batch = false;
            int pos = 0, neg = 0;
            for (const auto& smp : batch) {
              const int side = smp.mask.width;
              for (auto id : smp.mask.ids) in_batch = in_batch || id == c;
              for (int y0 = 0; y0 < side; y0 += p)
                for (int x0 = 0; x0 < side; x0 += p) {
                  int hits = 0;
                  for (int y = y0; y < y0 + p; ++y)
                    for (int x = x0; x < x0 + p; ++x) hits += smp.mask.ids[static_cast<std::size_t>(y) * side + x] == c;
                  pos += hits == p * p;
                  neg += hits == 0;
                }
            }
            if (!in_batch) continue;
            const bool term = mode == ContrastiveMode::InfoNce ? (pos >= 2 && neg >= 1)
                                                               : (pos >= 2 || (pos >= 1 && neg >= 1));
            if (term) expected.emplace(s + 1, c);
          }
        }
        Trainer tr(cfg, 1);
        const auto log = tr.train_step(ptrs(batch));
        const std::set<std::pair<int, int>> got(log.terms.begin(), log.terms.end());
        EXPECT_EQ(got, expected) << to_string(mode) << " stream " << stream << " disabled " << disabled;
        EXPECT_FALSE(expected.empty());
        EXPECT_EQ(log.sub_class_positives, 0);
      }
    }
  }
}

// Seg losses agree until the first step with a homogeneous patch has updated
// the weights, then split.
TEST(TrainStep, OffAndClDivergeOnlyAfterHomogeneousPatch) {
  const auto off_cfg = small_config(ContrastiveMode::Off);
  auto cl_cfg = small_config(ContrastiveMode::Cl);
  cl_cfg.train.contrastive_clip = 100.0f;  // keep the term unclipped
  const std::vector<data::Sample> checks{checkerboard(64, 0, 1, 1), checkerboard(64, 3, 2, 2)};
  const auto scenes = data::generate_samples(off_cfg.scene(), 2, 0, "s");
  Trainer off(off_cfg, 4), cl(cl_cfg, 4);
  for (int i = 0; i < 3; ++i) {
    const auto a = off.train_step(ptrs(checks)), b = cl.train_step(ptrs(checks));
    EXPECT_FALSE(b.has_homogeneous_patch);
    EXPECT_EQ(a.loss.seg_ce, b.loss.seg_ce);
    EXPECT_EQ(a.grad_norm_pre, b.grad_norm_pre);
    EXPECT_TRUE(b.terms.empty());
  }
  auto a = off.train_step(ptrs(scenes)), b = cl.train_step(ptrs(scenes));
  EXPECT_TRUE(b.has_homogeneous_patch);
  EXPECT_EQ(a.loss.seg_ce, b.loss.seg_ce);
  EXPECT_FALSE(b.terms.empty());
  EXPECT_LT(b.loss.contrastive_raw, 100.0);
  a = off.train_step(ptrs(scenes));
  b = cl.train_step(ptrs(scenes));
  EXPECT_NE(a.loss.seg_ce, b.loss.seg_ce);
}

TEST(TrainStep, BlockedClipLeavesSegmentationUntouched) {
  // every step clipped, so the contrastive term is inert
  auto cl_cfg = small_config(ContrastiveMode::Cl);
  cl_cfg.train.contrastive_clip = 1e-4f;
  cl_cfg.train.contrastive_clip_gradient = losses::ClipGradient::Block;
  const auto off_cfg = small_config(ContrastiveMode::Off);
  const auto train = data::generate_samples(off_cfg.scene(), 4, 0, "t");
  Trainer off(off_cfg, 6), cl(cl_cfg, 6);
  for (int i = 0; i < 3; ++i) {
    const auto a = off.train_step(ptrs(train)), b = cl.train_step(ptrs(train));
    ASSERT_GT(b.loss.contrastive_raw, 1e-4);
    EXPECT_EQ(a.loss.seg_ce, b.loss.seg_ce);
  }
}

TEST(RunExperiment, ArtifactsAndSingleSeedSigma) {
  auto cfg = load_config(nullptr, {"train.epochs=2", "train.seeds=[5]", "train.batch_size=2",
                                   "train.contrastive_mode=\"cl\""});
  const auto train = data::generate_samples(cfg.scene(), 3, 0, "train");
  const auto test = data::generate_samples(cfg.scene(), 2, 1, "test");
  const auto dir = fresh_dir("run");
  RunOptions opt;
  opt.run_id = "toy";
  opt.out_dir = dir;
  int steps = 0;
  opt.on_step = [&](const std::string&, std::uint64_t, const StepLog&) { ++steps; };
  const auto s = run_experiment(cfg, train, test, opt);
  EXPECT_EQ(steps, 4);  // 3 samples, batch 2, last partial batch kept
  ASSERT_EQ(s.runs.size(), 1u);
  EXPECT_EQ(s.final_miou.std, 0.0);
  EXPECT_EQ(s.final_miou.mean, s.runs[0].final_miou);
  EXPECT_GE(s.max_miou.mean, s.final_miou.mean);

  const auto metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')),
            "run_id,seed,epoch,seg_ce,seg_dice,contrastive_raw,contrastive_clipped,miou,surface_iou,building_iou,"
            "low_vegetation_iou,tree_iou,car_iou,clutter_iou");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
  EXPECT_EQ(metrics.find("toy,5,1,"), metrics.find('\n') + 1);
  const auto steps_csv = slurp(dir / "steps.csv");
  EXPECT_EQ(std::count(steps_csv.begin(), steps_csv.end(), '\n'), 5);
  const auto j = nlohmann::json::parse(slurp(dir / "toy_summary.json"));
  EXPECT_EQ(j.at("final_miou").at("std").get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "toy_seed5.ckpt"));
}

TEST(RunExperiment, ParallelSeedsMatchSequential) {
  auto cfg = load_config(nullptr, {"train.epochs=1", "train.seeds=[1,2]", "train.batch_size=2",
                                   "train.contrastive_mode=\"infonce\""});
  const auto train = data::generate_samples(cfg.scene(), 2, 0, "train");
  const auto test = data::generate_samples(cfg.scene(), 2, 1, "test");
  const auto seq_dir = fresh_dir("seq"), par_dir = fresh_dir("par");
  RunOptions seq;
  seq.out_dir = seq_dir;
  seq.save_checkpoints = false;
  RunOptions par = seq;
  par.out_dir = par_dir;
  par.threads = 2;
  run_experiment(cfg, train, test, seq);
  run_experiment(cfg, train, test, par);
  EXPECT_EQ(slurp(seq_dir / "metrics.csv"), slurp(par_dir / "metrics.csv"));
  EXPECT_EQ(slurp(seq_dir / "steps.csv"), slurp(par_dir / "steps.csv"));
  EXPECT_EQ(slurp(seq_dir / "run_summary.json"), slurp(par_dir / "run_summary.json"));
}

TEST(RunExperiment, FailurePersistsPartialResults) {
  auto cfg = load_config(nullptr, {"train.epochs=1", "train.seeds=[1,2]", "train.batch_size=2"});
  auto train = data::generate_samples(cfg.scene(), 2, 0, "train");
  const auto test = data::generate_samples(cfg.scene(), 2, 1, "test");
  train[1].image.values.push_back(0.0f);
  train[1].image.height = 65;  // wrong size only surfaces inside train_step
  const auto dir = fresh_dir("fail");
  RunOptions opt;
  opt.out_dir = dir;
  try {
    run_experiment(cfg, train, test, opt);
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("seed 1"), std::string::npos);
  }
  const auto j = nlohmann::json::parse(slurp(dir / "run_summary.json"));
  EXPECT_TRUE(j.contains("error"));
}

TEST(Compare, RowsDeltasAndDeterminism) {
  auto cfg = load_config(nullptr, {"train.epochs=1", "train.seeds=[1,2]", "train.batch_size=4",
                                   "compare.mixers=[\"mean-pooling\"]"});
  const auto train = data::generate_samples(cfg.scene(), 4, 0, "train");
  const auto test = data::generate_samples(cfg.scene(), 2, 1, "test");
  RunOptions opt;
  opt.save_checkpoints = false;
  opt.out_dir = fresh_dir("cmp_a");
  const auto a = compare(cfg, train, test, opt);
  opt.out_dir = fresh_dir("cmp_b");
  const auto b = compare(cfg, train, test, opt);
  EXPECT_EQ(a.csv, b.csv);
  EXPECT_EQ(slurp(fresh_dir("x").parent_path() / "ct_harness_cmp_a" / "compare.csv"),
            slurp(fresh_dir("x").parent_path() / "ct_harness_cmp_b" / "compare.csv"));
  ASSERT_EQ(a.rows.size(), 3u);
  EXPECT_EQ(a.rows[0].mode, ContrastiveMode::Off);
  EXPECT_EQ(a.rows[0].delta_miou, 0.0);
  for (const auto& r : a.rows) {
    EXPECT_EQ(r.summary.run_id, "mean-pooling_" + to_string(r.mode));
    EXPECT_DOUBLE_EQ(r.delta_miou, r.summary.final_miou.mean - a.rows[0].summary.final_miou.mean);
  }
  EXPECT_EQ(std::count(a.csv.begin(), a.csv.end(), '\n'), 4);
  EXPECT_NE(a.markdown.find("| mean-pooling | cl |"), std::string::npos);
  EXPECT_NE(a.markdown.find("car |"), std::string::npos);
  EXPECT_NE(a.markdown.find(" ("), std::string::npos);
}

TEST(CompareFormat, MarkdownShowsMeanSigmaAndSignedDelta) {
  CompareRow off{model::MixerKind::MeanPooling, ContrastiveMode::Off, {}, 0.0};
  off.summary.class_names = {"a", "b"};
  off.summary.miou_classes = {0, 1};
  off.summary.runs.resize(3);
  off.summary.final_miou = {0.5, 0.01};
  off.summary.max_miou = {0.6, 0.02};
  off.summary.class_iou = {{0.4, 0.0}, {0.6, 0.0}};
  CompareRow cl = off;
  cl.mode = ContrastiveMode::Cl;
  cl.summary.final_miou = {0.49, 0.03};
  cl.delta_miou = -0.01;
  const auto md = compare_markdown({off, cl});
  EXPECT_NE(md.find("| mean-pooling | off | 0.4000 | 0.6000 | 0.5000 (0.0100) | 0.6000 (0.0200) |  |"),
            std::string::npos)
      << md;
  EXPECT_NE(md.find("0.4900 (0.0300) | 0.6000 (0.0200) | -0.0100 |"), std::string::npos) << md;
  const auto csv = compare_csv({off, cl});
  EXPECT_NE(csv.find("mean-pooling,cl,3,0.490000,0.030000,0.600000,0.020000,-0.010000,0.400000,0.000000"),
            std::string::npos)
      << csv;
}

TEST(Checkpoint, RoundTripAndVersionCheck) {
  auto cfg = load_config(nullptr, {"model.mixer=\"mean-pooling\""});
  const model::SegmentationModel m(cfg.model, 9);
  const auto dir = fresh_dir("ckpt");
  save_checkpoint(dir / "m.ckpt", m, {{"note", "x"}});
  const auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.config().mixer, model::MixerKind::MeanPooling);
  const auto& ea = m.parameters().entries();
  const auto& eb = back.parameters().entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(ea[i].name, eb[i].name);
    const auto va = ea[i].value.values(), vb = eb[i].value.values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin(), vb.end())) << ea[i].name;
  }

  // bump the version field inside the header
  auto bytes = slurp(dir / "m.ckpt");
  const auto at = bytes.find("\"version\":1");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 10] = '7';
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), Error);

  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}

TEST(Config, DefaultsMatchTrainingRecipe) {
  const auto cfg = load_config(nullptr);
  EXPECT_FLOAT_EQ(cfg.train.lr, 8e-5f);
  EXPECT_EQ(cfg.train.grad_clip, 1.0f);
  EXPECT_EQ(cfg.train.contrastive_clip, 1.0f);
  EXPECT_EQ(cfg.train.contrastive_clip_gradient, losses::ClipGradient::Block);
  EXPECT_FLOAT_EQ(cfg.train.smoothing, 0.1f);
  EXPECT_EQ(cfg.train.batch_size, 8);
  EXPECT_EQ(cfg.train.epochs, 20);
  EXPECT_EQ(cfg.train.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(cfg.data.train_samples, 512u);
  EXPECT_EQ(cfg.data.test_samples, 128u);
  EXPECT_EQ(cfg.model.image_side, 64);
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  EXPECT_THROW(load_config(nlohmann::json{{"train", {{"learning_rate", 1}}}}), ConfigError);
  EXPECT_THROW(load_config(nullptr, {"model.depth=3"}), ConfigError);
  EXPECT_THROW(load_config(nullptr, {"train.epochs=\"many\""}), ConfigError);
  EXPECT_THROW(load_config(nullptr, {"train.epochs"}), ConfigError);
  EXPECT_THROW(load_config(nullptr, {"train.contrastive_mode=simclr"}), ConfigError);
  EXPECT_THROW(load_config(nullptr, {"train.contrastive_clip_gradient=zero"}), ConfigError);
  try {
    load_config(nullptr, {"train.lerning_rate=0.1"});
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.lerning_rate"), std::string::npos) << e.what();
  }
}

TEST(Config, OverridesApplyAfterFile) {
  const nlohmann::json file{{"train", {{"epochs", 3}, {"lr", 0.5}}}};
  const auto cfg = load_config(file, {"train.epochs=7", "train.contrastive_mode=cl", "train.seeds=[4, 5]"});
  EXPECT_EQ(cfg.train.epochs, 7);
  EXPECT_FLOAT_EQ(cfg.train.lr, 0.5f);
  EXPECT_EQ(cfg.train.contrastive_mode, ContrastiveMode::Cl);
  EXPECT_EQ(cfg.train.seeds, (std::vector<std::uint64_t>{4, 5}));
  // the dump reproduces the config
  const auto again = load_config(to_json(cfg));
  EXPECT_EQ(to_json(again), to_json(cfg));
}

TEST(Config, FloatsSurviveDumpBitExactly) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<float> u(1e-7f, 1.0f);
  for (int i = 0; i < 500; ++i) {
    auto cfg = load_config(nullptr);
    cfg.train.lr = u(rng);
    cfg.train.tau = u(rng);
    cfg.model.pixel_std[1] = u(rng);
    const auto again = load_config(nlohmann::json::parse(to_json(cfg).dump()));
    EXPECT_EQ(again.train.lr, cfg.train.lr);
    EXPECT_EQ(again.train.tau, cfg.train.tau);
    EXPECT_EQ(again.model.pixel_std[1], cfg.model.pixel_std[1]);
  }
}

TEST(Config, CarSizeAtFinestPatchRejected) {
  try {
    load_config(nullptr, {"data.car_size.max=4"});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("finest patch size"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(load_config(nullptr, {"data.car_size.max=3"}));
}

TEST(Config, ClassSelections) {
  const auto cfg = load_config(nullptr);
  EXPECT_EQ(cfg.miou_class_ids(), (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(cfg.class_names()[static_cast<std::size_t>(cfg.sub_patch_class_id())], "car");
  EXPECT_THROW(load_config(nullptr, {"eval.miou_classes=[\"road\"]"}), ConfigError);
}

TEST(Checks, AllSuitesPass) {
  for (const auto& r : checks::run_all()) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

TEST(Checks, SamplingOracleCoversOddSides) {
  for (std::uint64_t seed : {2u, 11u, 12u}) {
    const auto r = checks::sampling_oracle(60, seed);
    EXPECT_TRUE(r.passed) << r.detail;
  }
}

TEST(Config, PixelStatsMatchDefaultTrainingSet) {
  const auto cfg = load_config(nullptr);
  const auto train = data::generate_samples(cfg.scene(), cfg.data.train_samples, 0, "train");
  double sum[3]{}, sq[3]{}, n = 0;
  for (const auto& s : train)
    for (std::size_t i = 0; i < s.image.values.size(); i += 3, n += 1)
      for (int c = 0; c < 3; ++c) {
        sum[c] += s.image.values[i + c];
        sq[c] += double(s.image.values[i + c]) * s.image.values[i + c];
      }
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / n, sd = std::sqrt(sq[c] / n - mean * mean);
    EXPECT_NEAR(cfg.model.pixel_mean[static_cast<std::size_t>(c)], mean, 2e-3) << "channel " << c;
    EXPECT_NEAR(cfg.model.pixel_std[static_cast<std::size_t>(c)], sd, 2e-3) << "channel " << c;
  }
  EXPECT_THROW(load_config(nullptr, {"model.pixel_std=[1, 0, 1]"}), ConfigError);
}
