#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ct/config.hpp"
#include "ct/data.hpp"
#include "ct/losses.hpp"
#include "ct/model.hpp"

namespace ct::harness {

// What one optimizer step did, including the contrastive bookkeeping needed
// to audit the sampling rules from logs alone.
struct StepLog {
  int epoch = 0;
  std::int64_t step = 0;  // global, 1-based
  losses::LossBreakdown loss;
  double grad_norm_pre = 0.0;
  double grad_norm_post = 0.0;
  bool clipped = false;
  bool has_homogeneous_patch = false;
  std::vector<std::pair<int, int>> terms;  // (stage, class) with a contributing term
  std::int64_t positives = 0;
  std::int64_t negatives = 0;
  // Positives / mined negatives whose patch contains the sub-patch class.
  std::int64_t sub_class_positives = 0;
  std::int64_t sub_class_negatives = 0;
};

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, std::uint64_t seed);

  StepLog train_step(const std::vector<const data::Sample*>& batch, int epoch = 0);

  model::SegmentationModel& model() { return model_; }
  const model::SegmentationModel& model() const { return model_; }
  std::int64_t steps() const { return step_; }

 private:
  ExperimentConfig cfg_;
  std::uint64_t seed_;
  model::SegmentationModel model_;
  std::int64_t step_ = 0;
  int sub_class_;
};

struct Evaluation {
  std::vector<std::int64_t> tp, fp, fn;
  std::vector<double> iou;           // NaN where undefined
  std::vector<bool> defined;         // false: class absent from prediction and truth
  std::vector<int> miou_classes;
  std::vector<int> excluded;         // mIoU classes left out because undefined
  double miou = 0.0;
  double pixel_accuracy = 0.0;
};

// Confusion counts over all non-ignored pixels; IoU = TP / (TP + FP + FN).
Evaluation evaluate_predictions(const std::vector<std::vector<std::uint8_t>>& predictions,
                                const std::vector<std::vector<std::uint8_t>>& truths, int class_count,
                                const std::vector<int>& miou_classes);
Evaluation evaluate(const model::SegmentationModel& model, const std::vector<data::Sample>& test,
                    const std::vector<int>& miou_classes, int batch_size = 16);

struct EpochMetrics {
  int epoch = 0;
  double seg_ce = 0.0, seg_dice = 0.0, contrastive_raw = 0.0, contrastive_clipped = 0.0;
  Evaluation eval;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  double final_miou = 0.0;
  double max_miou = 0.0;
  std::vector<double> final_iou;
};

// Mean and population standard deviation (divide by N).
struct Stat {
  double mean = 0.0;
  double std = 0.0;
};
Stat summarize(const std::vector<double>& xs);

struct RunSummary {
  std::string run_id;
  std::vector<std::string> class_names;
  std::vector<int> miou_classes;
  std::vector<SeedRun> runs;
  Stat final_miou, max_miou;
  std::vector<Stat> class_iou;  // final epoch, per class
};

struct RunOptions {
  std::string run_id = "run";
  std::optional<std::filesystem::path> out_dir;  // metrics.csv, steps.csv, summary.json, checkpoints
  bool save_checkpoints = true;
  int threads = 1;  // parallel seeds
  std::function<void(const std::string& run_id, std::uint64_t seed, const StepLog&)> on_step;
  std::function<void(const std::string& run_id, std::uint64_t seed, const EpochMetrics&)> on_epoch;
};

RunSummary run_experiment(const ExperimentConfig& cfg, const std::vector<data::Sample>& train,
                          const std::vector<data::Sample>& test, const RunOptions& options = {});

std::string metrics_csv_header(const std::vector<std::string>& class_names);
std::string metrics_csv_row(const std::string& run_id, std::uint64_t seed, const EpochMetrics& m);
nlohmann::json summary_json(const RunSummary& s);

struct CompareRow {
  model::MixerKind mixer;
  ContrastiveMode mode;
  RunSummary summary;
  double delta_miou = 0.0;  // vs the off row of the same mixer
};

struct CompareResult {
  std::vector<CompareRow> rows;
  std::string csv;
  std::string markdown;
};

// Runs every (mixer, mode) pair of cfg.compare on the same seeds and data.
CompareResult compare(const ExperimentConfig& cfg, const std::vector<data::Sample>& train,
                      const std::vector<data::Sample>& test, const RunOptions& options = {});
std::string compare_csv(const std::vector<CompareRow>& rows);
std::string compare_markdown(const std::vector<CompareRow>& rows);

// Parallelism cap from CT_THREADS (default 1).
int threads_from_env();

// Flat float32 tensors behind a length-prefixed JSON header
// {version, model, tensors: [{name, shape, offset}]}.
void save_checkpoint(const std::filesystem::path& path, const model::SegmentationModel& model,
                     const nlohmann::json& meta = {});
model::SegmentationModel load_checkpoint(const std::filesystem::path& path);

}  // namespace ct::harness
