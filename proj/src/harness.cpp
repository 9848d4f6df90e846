#include "ct/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "ct/mining.hpp"
#include "ct/ops.hpp"
#include "ct/optim.hpp"
#include "ct/patching.hpp"
#include "ct/rng.hpp"

namespace ct::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kMiningStream = 0x6d696e65;

std::string fmt(double v, int decimals = 6) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::vector<std::int64_t> rows_for(const std::vector<mining::PatchRef>& refs, const std::vector<std::size_t>& picks) {
  std::vector<std::int64_t> out;
  out.reserve(picks.size());
  for (auto i : picks) out.push_back(refs[i].row);
  return out;
}

}  // namespace

Trainer::Trainer(const ExperimentConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), model_(cfg.model, seed), sub_class_(cfg.sub_patch_class_id()) {
  cfg_.validate();
}

StepLog Trainer::train_step(const std::vector<const data::Sample*>& batch, int epoch) {
  if (batch.empty()) throw Error("train_step: empty batch");
  ++step_;
  StepLog log;
  log.epoch = epoch;
  log.step = step_;

  const int side = cfg_.model.image_side;
  const auto B = static_cast<std::int64_t>(batch.size());
  std::vector<float> pixels;
  std::vector<std::uint8_t> labels;
  pixels.reserve(static_cast<std::size_t>(B) * side * side * 3);
  labels.reserve(static_cast<std::size_t>(B) * side * side);
  for (const auto* s : batch) {
    if (s->image.height != side || s->image.width != side || s->image.channels != 3 || s->mask.height != side ||
        s->mask.width != side)
      throw ShapeError("train_step: sample '" + s->id + "' is not " + std::to_string(side) + "x" + std::to_string(side) +
                       " RGB with a matching mask");
    pixels.insert(pixels.end(), s->image.values.begin(), s->image.values.end());
    labels.insert(labels.end(), s->mask.ids.begin(), s->mask.ids.end());
  }

  auto& params = model_.parameters();
  params.zero_grad();
  const auto& t = cfg_.train;
  const bool contrastive = t.contrastive_mode != ContrastiveMode::Off;

  model::StageFeatures features = model_.backbone_forward(Tensor::from({B, side, side, 3}, std::move(pixels)));
  if (contrastive) features = model_.project(std::move(features));
  const Tensor logits = model_.decode(features);
  const auto ce = losses::soft_cross_entropy(logits, labels, t.smoothing);
  const Tensor dice = losses::dice_loss(ops::softmax(logits, -1), labels);

  const auto specs = cfg_.model.stage_specs();
  std::vector<losses::ContrastiveTerm> terms;
  patching::ClassSet present;
  for (auto id : labels)
    if (id != kIgnoreLabel) present.set(id);

  for (int s = 0; s < model::kStages; ++s) {
    if (!t.stage_enable[s]) continue;
    std::vector<patching::PatchLabelGrid> grids;
    grids.reserve(batch.size());
    for (const auto* sample : batch) grids.push_back(patching::build_patch_grid(sample->mask, specs[s]));
    for (const auto& g : grids)
      for (const auto& e : g.entries) log.has_homogeneous_patch = log.has_homogeneous_patch || e.homogeneous_class;
    if (!contrastive) continue;

    const Tensor& emb = features.embeddings[s];
    const Tensor flat = ops::reshape(emb, {emb.numel() / emb.dim(-1), emb.dim(-1)});
    for (int c = 0; c < cfg_.model.class_count; ++c) {
      if (!present.test(static_cast<std::size_t>(c))) continue;
      const auto cls = static_cast<std::uint8_t>(c);
      std::mt19937_64 rng(derive_seed(seed_, {kMiningStream, static_cast<std::uint64_t>(step_),
                                              static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(c)}));
      const auto set = mining::gather_candidates(grids, emb, cls, s + 1, t.candidate_cap, rng);
      const auto pos = mining::rows_of(flat, set.positives);
      const auto neg = mining::rows_of(flat, set.negatives);
      const auto hard_pos = mining::mine_hard_positives(pos, rng);
      const auto hard_neg = mining::mine_hard_negatives(pos, neg, t.pair_budget, rng);

      const auto patch_has_sub = [&](const mining::PatchRef& r) {
        return grids[static_cast<std::size_t>(r.image)].at(r.cell).classes_present.test(static_cast<std::size_t>(sub_class_));
      };
      log.positives += static_cast<std::int64_t>(set.positives.size());
      for (const auto& r : set.positives) log.sub_class_positives += patch_has_sub(r);
      std::set<std::size_t> used_neg;
      for (const auto& p : hard_neg) used_neg.insert(p.second);
      log.negatives += static_cast<std::int64_t>(used_neg.size());
      for (auto i : used_neg) log.sub_class_negatives += patch_has_sub(set.negatives[i]);

      losses::ContrastiveTerm term{s + 1, c, std::nullopt};
      if (t.contrastive_mode == ContrastiveMode::InfoNce) {
        if (!hard_pos.empty() && !used_neg.empty()) {
          std::vector<std::size_t> a, p;
          for (const auto& pr : hard_pos) {
            a.push_back(pr.first);
            p.push_back(pr.second);
          }
          const std::vector<std::size_t> n(used_neg.begin(), used_neg.end());
          term.loss = losses::info_nce(ops::gather_rows(flat, rows_for(set.positives, a)),
                                       ops::gather_rows(flat, rows_for(set.positives, p)),
                                       ops::gather_rows(flat, rows_for(set.negatives, n)), t.tau);
        }
      } else {
        std::vector<std::int64_t> u_rows, v_rows;
        std::vector<float> targets;
        for (const auto& pr : hard_pos) {
          u_rows.push_back(set.positives[pr.first].row);
          v_rows.push_back(set.positives[pr.second].row);
          targets.push_back(1.0f);
        }
        for (const auto& pr : hard_neg) {
          u_rows.push_back(set.positives[pr.first].row);
          v_rows.push_back(set.negatives[pr.second].row);
          targets.push_back(0.0f);
        }
        if (!targets.empty())
          term.loss = losses::cl_loss(ops::gather_rows(flat, u_rows), ops::gather_rows(flat, v_rows), targets,
                                      t.smoothing);
      }
      if (term.loss) log.terms.emplace_back(term.stage, term.cls);
      terms.push_back(std::move(term));
    }
  }

  const auto joint = losses::joint_loss(ce, dice, terms, t.contrastive_clip, t.contrastive_clip_gradient);
  log.loss = joint.breakdown;
  if (!std::isfinite(log.loss.total)) {
    std::string ids;
    for (const auto* s : batch) ids += (ids.empty() ? "" : ",") + s->id;
    throw Error("train_step: non-finite loss at step " + std::to_string(step_) + " (batch " + ids + ")");
  }
  backward(joint.total);
  log.grad_norm_pre = clip_gradients(params, t.grad_clip);
  log.grad_norm_post = global_grad_norm(params);
  log.clipped = log.grad_norm_pre > t.grad_clip;
  adamw_step(params, t.lr, {t.beta1, t.beta2}, t.weight_decay);
  return log;
}

Evaluation evaluate_predictions(const std::vector<std::vector<std::uint8_t>>& predictions,
                                const std::vector<std::vector<std::uint8_t>>& truths, int class_count,
                                const std::vector<int>& miou_classes) {
  if (predictions.size() != truths.size()) throw ShapeError("evaluate: prediction and truth counts differ");
  if (predictions.empty()) throw Error("evaluate: no test samples");
  const auto k = static_cast<std::size_t>(class_count);
  Evaluation ev;
  ev.tp.assign(k, 0);
  ev.fp.assign(k, 0);
  ev.fn.assign(k, 0);
  std::int64_t correct = 0, counted = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (predictions[i].size() != truths[i].size()) throw ShapeError("evaluate: prediction and truth sizes differ");
    for (std::size_t p = 0; p < truths[i].size(); ++p) {
      const auto y = truths[i][p];
      if (y == kIgnoreLabel) continue;
      const auto q = predictions[i][p];
      if (y >= k || q >= k) throw Error("evaluate: class id out of range");
      ++counted;
      if (q == y) {
        ++ev.tp[y];
        ++correct;
      } else {
        ++ev.fp[q];
        ++ev.fn[y];
      }
    }
  }
  ev.iou.assign(k, std::numeric_limits<double>::quiet_NaN());
  ev.defined.assign(k, false);
  for (std::size_t c = 0; c < k; ++c) {
    const auto denom = ev.tp[c] + ev.fp[c] + ev.fn[c];
    if (denom == 0) continue;
    ev.defined[c] = true;
    ev.iou[c] = static_cast<double>(ev.tp[c]) / static_cast<double>(denom);
  }
  ev.miou_classes = miou_classes;
  double sum = 0.0;
  int used = 0;
  for (int c : miou_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= k) throw Error("evaluate: mIoU class out of range");
    if (!ev.defined[static_cast<std::size_t>(c)]) {
      ev.excluded.push_back(c);
      continue;
    }
    sum += ev.iou[static_cast<std::size_t>(c)];
    ++used;
  }
  ev.miou = used ? sum / used : std::numeric_limits<double>::quiet_NaN();
  ev.pixel_accuracy = counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
  return ev;
}

Evaluation evaluate(const model::SegmentationModel& model, const std::vector<data::Sample>& test,
                    const std::vector<int>& miou_classes, int batch_size) {
  if (test.empty()) throw Error("evaluate: no test samples");
  NoGradGuard no_grad;
  const int side = model.config().image_side;
  const auto k = static_cast<std::size_t>(model.config().class_count);
  std::vector<std::vector<std::uint8_t>> preds, truths;
  for (std::size_t start = 0; start < test.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(test.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<float> pixels;
    for (std::size_t i = start; i < end; ++i) {
      if (test[i].image.height != side || test[i].image.width != side)
        throw ShapeError("evaluate: sample '" + test[i].id + "' has the wrong size");
      pixels.insert(pixels.end(), test[i].image.values.begin(), test[i].image.values.end());
    }
    const Tensor logits =
        model.forward(Tensor::from({static_cast<std::int64_t>(end - start), side, side, 3}, std::move(pixels)));
    const auto v = logits.values();
    for (std::size_t i = start; i < end; ++i) {
      std::vector<std::uint8_t> pred(static_cast<std::size_t>(side) * side);
      const std::size_t base = (i - start) * pred.size() * k;
      for (std::size_t p = 0; p < pred.size(); ++p) {
        const auto row = v.subspan(base + p * k, k);
        pred[p] = static_cast<std::uint8_t>(std::max_element(row.begin(), row.end()) - row.begin());
      }
      preds.push_back(std::move(pred));
      truths.push_back(test[i].mask.ids);
    }
  }
  return evaluate_predictions(preds, truths, static_cast<int>(k), miou_classes);
}

Stat summarize(const std::vector<double>& xs) {
  std::vector<double> v;
  for (double x : xs)
    if (std::isfinite(x)) v.push_back(x);
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

std::string metrics_csv_header(const std::vector<std::string>& class_names) {
  std::string h = "run_id,seed,epoch,seg_ce,seg_dice,contrastive_raw,contrastive_clipped,miou";
  for (const auto& n : class_names) h += "," + n + "_iou";
  return h + "\n";
}

std::string metrics_csv_row(const std::string& run_id, std::uint64_t seed, const EpochMetrics& m) {
  std::string r = run_id + "," + std::to_string(seed) + "," + std::to_string(m.epoch) + "," + fmt(m.seg_ce) + "," +
                  fmt(m.seg_dice) + "," + fmt(m.contrastive_raw) + "," + fmt(m.contrastive_clipped) + "," +
                  fmt(m.eval.miou);
  for (double iou : m.eval.iou) r += "," + fmt(iou);
  return r + "\n";
}

namespace {

const char* kStepsHeader =
    "run_id,seed,epoch,step,seg_ce,seg_dice,contrastive_raw,contrastive_clipped,total,grad_norm_pre,grad_norm_post,"
    "clipped,terms,positives,negatives,sub_class_positives,sub_class_negatives\n";

std::string steps_csv_row(const std::string& run_id, std::uint64_t seed, const StepLog& s) {
  std::ostringstream os;
  os << run_id << ',' << seed << ',' << s.epoch << ',' << s.step << ',' << fmt(s.loss.seg_ce) << ','
     << fmt(s.loss.seg_dice) << ',' << fmt(s.loss.contrastive_raw) << ',' << fmt(s.loss.contrastive_clipped) << ','
     << fmt(s.loss.total) << ',' << fmt(s.grad_norm_pre, 9) << ',' << fmt(s.grad_norm_post, 9) << ',' << s.clipped
     << ',' << s.terms.size() << ',' << s.positives << ',' << s.negatives << ',' << s.sub_class_positives << ','
     << s.sub_class_negatives << '\n';
  return os.str();
}

void append_text(const fs::path& path, const std::string& header, const std::string& text) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("metrics: cannot write " + path.string());
  if (fresh) out << header;
  out << text;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("metrics: cannot write " + path.string());
  out << text;
}

json nan_safe(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Output for one seed, buffered so that parallel seeds still write in order.
struct SeedOutput {
  std::string metrics;
  std::string steps;
};

SeedRun run_seed(const ExperimentConfig& cfg, const std::vector<data::Sample>& train,
                 const std::vector<data::Sample>& test, std::uint64_t seed, const RunOptions& options,
                 SeedOutput& buffered, bool stream_to_disk, std::mutex& io) {
  Trainer trainer(cfg, seed);
  const auto miou_ids = cfg.miou_class_ids();
  SeedRun run;
  run.seed = seed;
  const auto flush = [&](const std::string& metrics, const std::string& steps) {
    if (stream_to_disk && options.out_dir) {
      std::lock_guard lock(io);
      append_text(*options.out_dir / "metrics.csv", metrics_csv_header(cfg.class_names()), metrics);
      append_text(*options.out_dir / "steps.csv", kStepsHeader, steps);
    } else {
      buffered.metrics += metrics;
      buffered.steps += steps;
    }
  };

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.train.batch_size);
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochMetrics m;
    m.epoch = epoch;
    std::string step_rows;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const data::Sample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(&train[order[i]]);
      const StepLog log = trainer.train_step(batch, epoch);
      m.seg_ce += log.loss.seg_ce;
      m.seg_dice += log.loss.seg_dice;
      m.contrastive_raw += log.loss.contrastive_raw;
      m.contrastive_clipped += log.loss.contrastive_clipped;
      ++steps;
      step_rows += steps_csv_row(options.run_id, seed, log);
      if (options.on_step) {
        std::lock_guard lock(io);
        options.on_step(options.run_id, seed, log);
      }
    }
    if (steps > 0) {
      m.seg_ce /= steps;
      m.seg_dice /= steps;
      m.contrastive_raw /= steps;
      m.contrastive_clipped /= steps;
    }
    m.eval = evaluate(trainer.model(), test, miou_ids);
    if (options.on_epoch) {
      std::lock_guard lock(io);
      options.on_epoch(options.run_id, seed, m);
    }
    flush(metrics_csv_row(options.run_id, seed, m), step_rows);
    run.epochs.push_back(std::move(m));
  }
  if (run.epochs.empty()) {
    EpochMetrics m;
    m.eval = evaluate(trainer.model(), test, miou_ids);
    flush(metrics_csv_row(options.run_id, seed, m), "");
    run.epochs.push_back(std::move(m));
  }
  run.final_miou = run.epochs.back().eval.miou;
  run.max_miou = -std::numeric_limits<double>::infinity();
  for (const auto& e : run.epochs)
    if (std::isfinite(e.eval.miou)) run.max_miou = std::max(run.max_miou, e.eval.miou);
  if (!std::isfinite(run.max_miou)) run.max_miou = std::numeric_limits<double>::quiet_NaN();
  run.final_iou = run.epochs.back().eval.iou;

  if (options.out_dir && options.save_checkpoints) {
    fs::create_directories(*options.out_dir / "checkpoints");
    save_checkpoint(*options.out_dir / "checkpoints" / (options.run_id + "_seed" + std::to_string(seed) + ".ckpt"),
                    trainer.model(), {{"run_id", options.run_id}, {"seed", seed}, {"epochs", cfg.train.epochs}});
  }
  return run;
}

RunSummary summarize_runs(const ExperimentConfig& cfg, const std::string& run_id, std::vector<SeedRun> runs) {
  RunSummary s;
  s.run_id = run_id;
  s.class_names = cfg.class_names();
  s.miou_classes = cfg.miou_class_ids();
  s.runs = std::move(runs);
  std::vector<double> finals, maxes;
  for (const auto& r : s.runs) {
    finals.push_back(r.final_miou);
    maxes.push_back(r.max_miou);
  }
  s.final_miou = summarize(finals);
  s.max_miou = summarize(maxes);
  for (std::size_t c = 0; c < s.class_names.size(); ++c) {
    std::vector<double> xs;
    for (const auto& r : s.runs) xs.push_back(r.final_iou[c]);
    s.class_iou.push_back(summarize(xs));
  }
  return s;
}

}  // namespace

json summary_json(const RunSummary& s) {
  json seeds = json::array();
  for (const auto& r : s.runs) {
    json iou = json::object();
    for (std::size_t c = 0; c < s.class_names.size(); ++c) iou[s.class_names[c]] = nan_safe(r.final_iou[c]);
    seeds.push_back({{"seed", r.seed}, {"final_miou", nan_safe(r.final_miou)}, {"max_miou", nan_safe(r.max_miou)},
                     {"final_iou", iou}});
  }
  json classes = json::object();
  for (std::size_t c = 0; c < s.class_names.size(); ++c)
    classes[s.class_names[c]] = {{"mean", nan_safe(s.class_iou[c].mean)}, {"std", nan_safe(s.class_iou[c].std)}};
  json miou_names = json::array();
  for (int c : s.miou_classes) miou_names.push_back(s.class_names[static_cast<std::size_t>(c)]);
  return {{"run_id", s.run_id},
          {"std_formula", "population: sqrt(sum((x - mean)^2) / N) over seeds"},
          {"miou_classes", miou_names},
          {"final_miou", {{"mean", nan_safe(s.final_miou.mean)}, {"std", nan_safe(s.final_miou.std)}}},
          {"max_miou", {{"mean", nan_safe(s.max_miou.mean)}, {"std", nan_safe(s.max_miou.std)}}},
          {"class_iou", classes},
          {"seeds", seeds}};
}

int threads_from_env() {
  const char* v = std::getenv("CT_THREADS");
  if (!v || !*v) return 1;
  try {
    return std::max(1, std::stoi(v));
  } catch (const std::exception&) {
    throw ConfigError(std::string("CT_THREADS must be a positive integer, got '") + v + "'");
  }
}

RunSummary run_experiment(const ExperimentConfig& cfg, const std::vector<data::Sample>& train,
                          const std::vector<data::Sample>& test, const RunOptions& options) {
  cfg.validate();
  if (train.empty() && cfg.train.epochs > 0) throw Error("run_experiment: no training samples");
  if (test.empty()) throw Error("run_experiment: no test samples");
  if (options.out_dir) fs::create_directories(*options.out_dir);

  const auto& seeds = cfg.train.seeds;
  const int threads = std::clamp(options.threads, 1, static_cast<int>(seeds.size()));
  std::vector<SeedRun> runs(seeds.size());
  std::vector<SeedOutput> outputs(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::mutex io;

  const auto persist_partial = [&](const std::string& error) {
    if (!options.out_dir) return;
    std::vector<SeedRun> done;
    for (std::size_t i = 0; i < runs.size(); ++i)
      if (!runs[i].epochs.empty()) done.push_back(runs[i]);
    json j = done.empty() ? json{{"run_id", options.run_id}} : summary_json(summarize_runs(cfg, options.run_id, done));
    j["error"] = error;
    write_text(*options.out_dir / (options.run_id + "_summary.json"), j.dump(2) + "\n");
  };

  if (threads == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      try {
        runs[i] = run_seed(cfg, train, test, seeds[i], options, outputs[i], true, io);
      } catch (const std::exception& e) {
        const std::string msg = "seed " + std::to_string(seeds[i]) + " failed: " + e.what();
        persist_partial(msg);
        throw Error("run_experiment: " + msg);
      }
    }
  } else {
    std::size_t next = 0;
    std::mutex queue;
    auto worker = [&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(queue);
          if (next >= seeds.size()) return;
          i = next++;
        }
        try {
          runs[i] = run_seed(cfg, train, test, seeds[i], options, outputs[i], false, io);
        } catch (const std::exception& e) {
          errors[i] = "seed " + std::to_string(seeds[i]) + " failed: " + e.what();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (options.out_dir) {
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        append_text(*options.out_dir / "metrics.csv", metrics_csv_header(cfg.class_names()), outputs[i].metrics);
        append_text(*options.out_dir / "steps.csv", kStepsHeader, outputs[i].steps);
      }
    }
    for (const auto& e : errors)
      if (!e.empty()) {
        persist_partial(e);
        throw Error("run_experiment: " + e);
      }
  }

  RunSummary summary = summarize_runs(cfg, options.run_id, std::move(runs));
  if (options.out_dir) write_text(*options.out_dir / (options.run_id + "_summary.json"), summary_json(summary).dump(2) + "\n");
  return summary;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  if (rows.empty()) return "";
  const auto& names = rows.front().summary.class_names;
  std::string out = "model,contrastive_mode,seeds,miou_mean,miou_std,max_miou_mean,max_miou_std,delta_miou";
  for (const auto& n : names) out += "," + n + "_iou_mean," + n + "_iou_std";
  out += "\n";
  for (const auto& r : rows) {
    const auto& s = r.summary;
    out += model::to_string(r.mixer) + "," + to_string(r.mode) + "," + std::to_string(s.runs.size()) + "," +
           fmt(s.final_miou.mean) + "," + fmt(s.final_miou.std) + "," + fmt(s.max_miou.mean) + "," +
           fmt(s.max_miou.std) + "," + fmt(r.delta_miou);
    for (const auto& st : s.class_iou) out += "," + fmt(st.mean) + "," + fmt(st.std);
    out += "\n";
  }
  return out;
}

std::string compare_markdown(const std::vector<CompareRow>& rows) {
  if (rows.empty()) return "";
  const auto& first = rows.front().summary;
  std::string out = "| Model | Contrastive |";
  for (const auto& n : first.class_names) out += " " + n + " |";
  out += " mIoU (σ) | max mIoU (σ) | Δ mIoU |\n|---|---|";
  for (std::size_t i = 0; i < first.class_names.size(); ++i) out += "---|";
  out += "---|---|---|\n";
  for (const auto& r : rows) {
    const auto& s = r.summary;
    out += "| " + model::to_string(r.mixer) + " | " + to_string(r.mode) + " |";
    for (const auto& st : s.class_iou) out += " " + fmt(st.mean, 4) + " |";
    char delta[32];
    std::snprintf(delta, sizeof delta, "%+.4f", r.delta_miou);
    out += " " + fmt(s.final_miou.mean, 4) + " (" + fmt(s.final_miou.std, 4) + ") | " + fmt(s.max_miou.mean, 4) +
           " (" + fmt(s.max_miou.std, 4) + ") | " + (r.mode == ContrastiveMode::Off ? std::string("") : delta) + " |\n";
  }
  std::string classes;
  for (int c : first.miou_classes) classes += (classes.empty() ? "" : ", ") + first.class_names[static_cast<std::size_t>(c)];
  out += "\nClass columns are final-epoch IoU averaged over " + std::to_string(first.runs.size()) +
         " seeds. mIoU averages " + classes + "; σ is the population standard deviation over seeds. Δ is against the "
         "`off` row of the same model.\n";
  return out;
}

CompareResult compare(const ExperimentConfig& cfg, const std::vector<data::Sample>& train,
                      const std::vector<data::Sample>& test, const RunOptions& options) {
  CompareResult result;
  for (auto mixer : cfg.compare.mixers) {
    std::optional<double> baseline;
    for (auto mode : cfg.compare.modes) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.model.mixer = mixer;
      run_cfg.train.contrastive_mode = mode;
      RunOptions run_opts = options;
      run_opts.run_id = model::to_string(mixer) + "_" + to_string(mode);
      CompareRow row{mixer, mode, run_experiment(run_cfg, train, test, run_opts), 0.0};
      if (mode == ContrastiveMode::Off) baseline = row.summary.final_miou.mean;
      result.rows.push_back(std::move(row));
    }
    if (baseline)
      for (auto& r : result.rows)
        if (r.mixer == mixer) r.delta_miou = r.summary.final_miou.mean - *baseline;
  }
  result.csv = compare_csv(result.rows);
  result.markdown = compare_markdown(result.rows);
  if (options.out_dir) {
    write_text(*options.out_dir / "compare.csv", result.csv);
    write_text(*options.out_dir / "compare.md", result.markdown);
  }
  return result;
}

void save_checkpoint(const fs::path& path, const model::SegmentationModel& model, const json& meta) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : model.parameters().entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.value.numel()) * sizeof(float);
  }
  const json header{{"version", 1}, {"model", to_json(model.config())}, {"meta", meta}, {"tensors", tensors}};
  const std::string text = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  std::uint64_t len = text.size();
  unsigned char len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>(len >> (8 * i));
  out.write(reinterpret_cast<const char*>(len_bytes), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : model.parameters().entries()) {
    const auto v = e.value.values();
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

model::SegmentationModel load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  unsigned char len_bytes[8];
  if (!in.read(reinterpret_cast<char*>(len_bytes), 8)) throw Error("checkpoint: truncated header in " + path.string());
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(len_bytes[i]) << (8 * i);
  if (len > (1u << 26)) throw Error("checkpoint: implausible header length in " + path.string());
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw Error("checkpoint: truncated header in " + path.string());
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("checkpoint: bad header in " + path.string() + ": " + e.what());
  }
  if (!header.contains("version")) throw Error("checkpoint: " + path.string() + " has no version field");
  if (header["version"] != 1)
    throw Error("checkpoint: unsupported version " + header["version"].dump() + " in " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  model::SegmentationModel model(model_config_from_json(header.at("model")), 0);
  std::map<std::string, json> by_name;
  for (const auto& t : header.at("tensors")) by_name[t.at("name").get<std::string>()] = t;
  for (auto& e : model.parameters().entries()) {
    const auto it = by_name.find(e.name);
    if (it == by_name.end()) throw Error("checkpoint: " + path.string() + " lacks tensor '" + e.name + "'");
    if (it->second.at("shape").get<Shape>() != e.value.shape())
      throw Error("checkpoint: tensor '" + e.name + "' has shape " + it->second.at("shape").dump() + ", model expects " +
                  to_string(e.value.shape()));
    const auto offset = it->second.at("offset").get<std::uint64_t>();
    const auto bytes = static_cast<std::uint64_t>(e.value.numel()) * sizeof(float);
    if (offset + bytes > blob.size()) throw Error("checkpoint: tensor '" + e.name + "' runs past the end of " + path.string());
    auto dst = e.value.mutable_values();
    std::memcpy(dst.data(), blob.data() + offset, bytes);
  }
  if (by_name.size() != model.parameters().entries().size())
    throw Error("checkpoint: " + path.string() + " holds tensors the model does not have");
  return model;
}

}  // namespace ct::harness
