#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ct/checks.hpp"
#include "ct/config.hpp"
#include "ct/data.hpp"
#include "ct/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::string out;
  std::string data;
  std::string checkpoint;
};

void add_config_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--set", c.sets, "override, key.path=value (repeatable)");
}

void add_train_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "single training seed (replaces train.seeds)");
  cmd->add_option("--contrastive-mode", c.mode, "off, infonce or cl");
  cmd->add_option("--epochs", c.epochs, "training epochs");
  cmd->add_option("--batch-size", c.batch_size, "batch size");
  cmd->add_option("--data", c.data, "dataset dir from gen-data (default: synthesize in memory)");
}

ct::ExperimentConfig effective_config(const Common& c, bool data_seed) {
  std::vector<std::string> sets = c.sets;
  if (c.seed) {
    const auto v = std::to_string(*c.seed);
    sets.push_back(data_seed ? "data.seed=" + v : "train.seeds=[" + v + "]");
  }
  if (c.mode) sets.push_back("train.contrastive_mode=\"" + *c.mode + "\"");
  if (c.epochs) sets.push_back("train.epochs=" + std::to_string(*c.epochs));
  if (c.batch_size) sets.push_back("train.batch_size=" + std::to_string(*c.batch_size));
  return c.config.empty() ? ct::load_config(nullptr, sets) : ct::load_config_file(c.config, sets);
}

void dump_config(const ct::ExperimentConfig& cfg, const std::optional<fs::path>& out) {
  const std::string text = ct::to_json(cfg).dump(2) + "\n";
  std::cout << "effective config:\n" << text << std::flush;
  if (out) {
    fs::create_directories(*out);
    std::ofstream(*out / "config.json", std::ios::binary) << text;
  }
}

struct Split {
  std::vector<ct::data::Sample> train, test;
};

Split load_or_generate(const ct::ExperimentConfig& cfg, const std::string& dir) {
  Split s;
  if (dir.empty()) {
    s.train = ct::data::generate_samples(cfg.scene(), cfg.data.train_samples, 0, "train");
    s.test = ct::data::generate_samples(cfg.scene(), cfg.data.test_samples, 1, "test");
    return s;
  }
  if (!fs::exists(fs::path(dir) / "manifest.json")) throw ct::Error("no manifest.json in " + dir);
  const auto manifest = ct::data::load_manifest(dir);
  if (manifest.palette != cfg.data.scene.palette)
    throw ct::ConfigError("dataset palette in " + dir + " differs from data.palette");
  s.train = ct::data::load_dataset(dir, ct::data::Split::Train);
  s.test = ct::data::load_dataset(dir, ct::data::Split::Test);
  for (const auto* part : {&s.train, &s.test})
    for (const auto& smp : *part)
      if (smp.image.height != cfg.model.image_side || smp.image.width != cfg.model.image_side)
        throw ct::ConfigError("sample '" + smp.id + "' is " + std::to_string(smp.image.width) + "x" +
                              std::to_string(smp.image.height) + " but model.image_side is " +
                              std::to_string(cfg.model.image_side));
  return s;
}

// Metrics CSVs are append-only within a run; start each invocation clean.
void clear_metrics(const fs::path& out) {
  for (const char* name : {"metrics.csv", "steps.csv", "compare.csv", "compare.md"}) fs::remove(out / name);
}

ct::harness::RunOptions run_options(const fs::path& out) {
  ct::harness::RunOptions o;
  o.out_dir = out;
  o.threads = ct::harness::threads_from_env();
  o.on_epoch = [](const std::string& id, std::uint64_t seed, const ct::harness::EpochMetrics& m) {
    std::printf("%s seed %llu epoch %d: ce %.4f dice %.4f contrastive %.4f (clipped %.4f) mIoU %.4f\n", id.c_str(),
                static_cast<unsigned long long>(seed), m.epoch, m.seg_ce, m.seg_dice, m.contrastive_raw,
                m.contrastive_clipped, m.eval.miou);
    std::fflush(stdout);
  };
  return o;
}

int cmd_gen_data(const Common& c) {
  const auto cfg = effective_config(c, true);
  const fs::path out = c.out;
  dump_config(cfg, std::nullopt);
  const auto train = ct::data::generate_samples(cfg.scene(), cfg.data.train_samples, 0, "train");
  const auto test = ct::data::generate_samples(cfg.scene(), cfg.data.test_samples, 1, "test");
  ct::data::save_dataset(out, train, test, cfg.data.scene.palette);
  std::printf("wrote %zu train + %zu test samples to %s\n", train.size(), test.size(), out.string().c_str());
  return kExitOk;
}

int cmd_train(const Common& c) {
  const auto cfg = effective_config(c, false);
  const fs::path out = c.out;
  dump_config(cfg, out);
  const auto split = load_or_generate(cfg, c.data);
  clear_metrics(out);
  auto opt = run_options(out);
  opt.run_id = ct::model::to_string(cfg.model.mixer) + "_" + ct::to_string(cfg.train.contrastive_mode);
  const auto s = ct::harness::run_experiment(cfg, split.train, split.test, opt);
  std::printf("%s: final mIoU %.4f (%.4f), max mIoU %.4f (%.4f) over %zu seed(s)\n", s.run_id.c_str(),
              s.final_miou.mean, s.final_miou.std, s.max_miou.mean, s.max_miou.std, s.runs.size());
  return kExitOk;
}

int cmd_eval(const Common& c) {
  auto cfg = effective_config(c, false);
  const auto model = ct::harness::load_checkpoint(c.checkpoint);
  cfg.model = model.config();
  cfg.validate();
  dump_config(cfg, std::nullopt);
  const auto split = load_or_generate(cfg, c.data);
  if (split.test.empty()) throw ct::Error("no test samples to evaluate");
  const auto ev = ct::harness::evaluate(model, split.test, cfg.miou_class_ids());
  const auto names = cfg.class_names();
  json iou = json::object(), excluded = json::array();
  for (std::size_t k = 0; k < names.size(); ++k) iou[names[k]] = ev.defined[k] ? json(ev.iou[k]) : json(nullptr);
  for (int k : ev.excluded) excluded.push_back(names[static_cast<std::size_t>(k)]);
  json miou_names = json::array();
  for (int k : ev.miou_classes) miou_names.push_back(names[static_cast<std::size_t>(k)]);
  const json report{{"checkpoint", c.checkpoint},
                    {"test_samples", split.test.size()},
                    {"miou", std::isfinite(ev.miou) ? json(ev.miou) : json(nullptr)},
                    {"miou_classes", miou_names},
                    {"undefined_excluded", excluded},
                    {"pixel_accuracy", ev.pixel_accuracy},
                    {"iou", iou}};
  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    std::ofstream(fs::path(c.out) / "eval.json", std::ios::binary) << text;
  }
  return kExitOk;
}

int cmd_compare(const Common& c) {
  const auto cfg = effective_config(c, false);
  const fs::path out = c.out;
  dump_config(cfg, out);
  const auto split = load_or_generate(cfg, c.data);
  clear_metrics(out);
  const auto result = ct::harness::compare(cfg, split.train, split.test, run_options(out));
  std::cout << "\n" << result.markdown;
  return kExitOk;
}

int cmd_check() {
  bool ok = true;
  for (const auto& r : ct::checks::run_all()) {
    std::printf("%s %s (%.2fs): %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ct: patch-level contrastive training for segmentation"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset (images, masks, manifest)");
  add_config_flags(gen, c);
  gen->add_option("--seed", c.seed, "data seed (replaces data.seed)");
  gen->add_option("--out", c.out, "dataset dir")->required();

  auto* train = app.add_subcommand("train", "train every seed; writes metrics, summary and checkpoints");
  add_config_flags(train, c);
  add_train_flags(train, c);
  train->add_option("--out", c.out, "output dir")->required();

  auto* eval = app.add_subcommand("eval", "per-class IoU of a checkpoint on the test split");
  add_config_flags(eval, c);
  eval->add_option("--checkpoint", c.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", c.data, "dataset dir (default: synthesize in memory)");
  eval->add_option("--out", c.out, "output dir for eval.json");

  auto* cmp = app.add_subcommand("compare", "every (mixer, contrastive mode) pair on the same seeds and data");
  add_config_flags(cmp, c);
  add_train_flags(cmp, c);
  cmp->add_option("--out", c.out, "output dir")->required();

  app.add_subcommand("check", "gradient checks, sampling oracles and patch arithmetic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(c);
    if (train->parsed()) return cmd_train(c);
    if (eval->parsed()) return cmd_eval(c);
    if (cmp->parsed()) return cmd_compare(c);
    return cmd_check();
  } catch (const ct::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}
