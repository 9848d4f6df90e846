#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ct/optim.hpp"
#include "ct/patching.hpp"
#include "ct/tensor.hpp"

namespace ct::model {

inline constexpr int kStages = 4;

enum class MixerKind { WindowedAttention, MeanPooling };

std::string to_string(MixerKind kind);
MixerKind mixer_from_string(const std::string& name);

struct ModelConfig {
  MixerKind mixer = MixerKind::WindowedAttention;
  std::array<int, kStages> stage_dims{16, 32, 64, 128};
  std::array<int, kStages> blocks_per_stage{1, 1, 1, 1};
  int projection_dim = 64;
  int class_count = 6;
  int image_side = 64;
  int window = 4;  // attention window side, clamped to the stage grid
  int head_dim = 16;
  int mlp_ratio = 2;
  int decoder_dim = 32;
  // Per-channel input standardization. Defaults are the channel statistics
  // of the default synthetic training set.
  std::array<float, 3> pixel_mean{0.540f, 0.537f, 0.470f};
  std::array<float, 3> pixel_std{0.091f, 0.080f, 0.111f};

  void validate() const;
  // Pixel side of one stage-s token: 4 * 2^(s-1).
  int patch_size(int stage) const { return 4 << (stage - 1); }
  int grid_side(int stage) const { return image_side / patch_size(stage); }
  std::vector<patching::StageSpec> stage_specs() const;
};

// Token maps Z_s as [B, h_s, w_s, d_s]; projected embeddings F_s as
// [B, h_s, w_s, n] once project() has run.
struct StageFeatures {
  std::array<Tensor, kStages> tokens;
  std::array<Tensor, kStages> embeddings;
  bool projected = false;
};

// Hierarchical token-mixer backbone, top-down decoder, and one projection
// head per stage. Projection leaves are initialized from their own random
// stream so that models built with the same seed share backbone and decoder
// weights regardless of whether the heads are ever used.
class SegmentationModel {
 public:
  SegmentationModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Parameters& parameters() { return params_; }
  const Parameters& parameters() const { return params_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  // images: [B, H, W, 3] with H = W = image_side.
  StageFeatures backbone_forward(const Tensor& images) const;
  StageFeatures project(StageFeatures features) const;
  // Returns [B, H, W, K] logits.
  Tensor decode(const StageFeatures& features) const;
  Tensor forward(const Tensor& images) const { return decode(backbone_forward(images)); }

  static bool is_projection_leaf(const std::string& name);
  static bool is_decoder_leaf(const std::string& name);

 private:
  struct Linear {
    Tensor weight, bias;
  };
  struct Norm {
    Tensor gamma, beta;
  };
  struct Block {
    Norm norm1, norm2;
    Linear qkv, proj;  // attention mixer only
    Linear fc1, fc2;
  };
  struct Stage {
    Norm merge_norm;  // stages 2..4
    Linear merge;     // stem for stage 1
    std::vector<Block> blocks;
  };

  Tensor run_block(const Block& block, const Tensor& x, int dim) const;
  Tensor attention(const Block& block, const Tensor& x, int dim) const;

  ModelConfig config_;
  bool training_ = true;
  Parameters params_;
  Norm stem_norm_;
  std::array<Stage, kStages> stages_;
  std::array<Linear, kStages> laterals_;
  Linear head_;
  std::array<Linear, kStages> proj1_, proj2_;
};

}  // namespace ct::model
