#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ct/data.hpp"
#include "ct/losses.hpp"
#include "ct/model.hpp"
#include "ct/tensor.hpp"

namespace ct {

// Invalid configuration or command-line input.
struct ConfigError : Error {
  using Error::Error;
};

enum class ContrastiveMode { Off, InfoNce, Cl };

std::string to_string(ContrastiveMode mode);
ContrastiveMode contrastive_mode_from_string(const std::string& name);

std::string to_string(losses::ClipGradient mode);
losses::ClipGradient clip_gradient_from_string(const std::string& name);

struct DataConfig {
  std::size_t train_samples = 512;
  std::size_t test_samples = 128;
  data::SceneConfig scene;  // scene.image_side follows model.image_side
};

struct TrainConfig {
  ContrastiveMode contrastive_mode = ContrastiveMode::Off;
  float lr = 8e-5f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float weight_decay = 0.01f;
  int batch_size = 8;
  int epochs = 20;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  float grad_clip = 1.0f;
  float contrastive_clip = 1.0f;
  losses::ClipGradient contrastive_clip_gradient = losses::ClipGradient::Block;
  float tau = 0.07f;
  float smoothing = 0.1f;  // shared by segmentation CE and the CL loss
  std::array<bool, model::kStages> stage_enable{true, true, true, true};
  std::size_t candidate_cap = 256;
  std::size_t pair_budget = 128;
};

struct EvalConfig {
  // Classes averaged into mIoU; the remaining ones are still reported.
  std::vector<std::string> miou_classes{"surface", "building", "low_vegetation", "tree", "car"};
  std::string sub_patch_class = "car";
};

struct CompareConfig {
  std::vector<ContrastiveMode> modes{ContrastiveMode::Off, ContrastiveMode::InfoNce, ContrastiveMode::Cl};
  std::vector<model::MixerKind> mixers{model::MixerKind::WindowedAttention, model::MixerKind::MeanPooling};
};

struct ExperimentConfig {
  model::ModelConfig model;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  CompareConfig compare;

  void validate() const;
  std::vector<std::string> class_names() const;
  std::vector<int> miou_class_ids() const;
  int sub_patch_class_id() const;
  data::SceneConfig scene() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
nlohmann::json to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

// Builds a config from defaults, then `file` (may be null), then dotted-key
// overrides "a.b.c=value" (value parsed as JSON, else taken as a string).
// Unknown keys and type mismatches are rejected with ConfigError.
ExperimentConfig load_config(const nlohmann::json& file, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config_file(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace ct
