#include "ct/model.hpp"

#include <cmath>
#include <random>

#include "ct/ops.hpp"

namespace ct::model {

std::string to_string(MixerKind kind) {
  return kind == MixerKind::WindowedAttention ? "windowed-attention" : "mean-pooling";
}

MixerKind mixer_from_string(const std::string& name) {
  if (name == "windowed-attention") return MixerKind::WindowedAttention;
  if (name == "mean-pooling") return MixerKind::MeanPooling;
  throw Error("model: unknown mixer kind '" + name + "' (expected windowed-attention or mean-pooling)");
}

void ModelConfig::validate() const {
  if (image_side <= 0 || image_side % 32 != 0)
    throw Error("model: image_side " + std::to_string(image_side) + " must be a positive multiple of 32");
  for (int s = 0; s < kStages; ++s) {
    if (stage_dims[s] <= 0) throw Error("model: stage_dims must be positive");
    if (s > 0 && stage_dims[s] <= stage_dims[s - 1]) throw Error("model: stage_dims must be strictly increasing");
    if (blocks_per_stage[s] < 0) throw Error("model: blocks_per_stage must be non-negative");
    if (mixer == MixerKind::WindowedAttention && stage_dims[s] % std::min(head_dim, stage_dims[s]) != 0)
      throw Error("model: stage dim " + std::to_string(stage_dims[s]) + " not divisible by head_dim");
  }
  if (projection_dim <= 0 || class_count <= 0 || decoder_dim <= 0 || mlp_ratio <= 0 || head_dim <= 0)
    throw Error("model: projection_dim, class_count, decoder_dim, mlp_ratio and head_dim must be positive");
  if (window <= 0) throw Error("model: window must be positive");
  for (float sd : pixel_std)
    if (!(sd > 0.0f)) throw Error("model: pixel_std must be positive");
  for (int s = 1; s <= kStages; ++s) {
    const int g = grid_side(s);
    if (g % std::min(window, g) != 0)
      throw Error("model: window " + std::to_string(window) + " does not tile stage grid " + std::to_string(g));
  }
}

std::vector<patching::StageSpec> ModelConfig::stage_specs() const {
  std::vector<int> sizes;
  for (int s = 1; s <= kStages; ++s) sizes.push_back(patch_size(s));
  return patching::stage_specs(image_side, image_side, sizes);
}

namespace {

class Init {
 public:
  Init(Parameters& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
  Tensor weight(const std::string& name, int fan_in, int fan_out) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> d(-bound, bound);
    std::vector<float> v(static_cast<std::size_t>(fan_in) * fan_out);
    for (auto& x : v) x = d(rng_);
    return params_.add(name, Tensor::from({fan_in, fan_out}, std::move(v)));
  }
  Tensor constant(const std::string& name, int n, float value) {
    return params_.add(name, Tensor::full({n}, value));
  }

 private:
  Parameters& params_;
  std::mt19937_64 rng_;
};

constexpr std::uint64_t kProjectionStream = 0x9e3779b97f4a7c15ULL;

}  // namespace

SegmentationModel::SegmentationModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& dims = config_.stage_dims;
  Init init(params_, seed);
  auto linear = [&](const std::string& name, int in, int out) {
    return Linear{init.weight(name + ".weight", in, out), init.constant(name + ".bias", out, 0.0f)};
  };
  auto norm = [&](const std::string& name, int n) {
    return Norm{init.constant(name + ".gamma", n, 1.0f), init.constant(name + ".beta", n, 0.0f)};
  };

  for (int s = 0; s < kStages; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s + 1);
    auto& st = stages_[s];
    if (s == 0) {
      st.merge = linear("backbone.stem", 4 * 4 * 3, dims[0]);
      stem_norm_ = norm("backbone.stem_norm", dims[0]);
    } else {
      st.merge_norm = norm(prefix + ".merge_norm", 4 * dims[s - 1]);
      st.merge = linear(prefix + ".merge", 4 * dims[s - 1], dims[s]);
    }
    for (int b = 0; b < config_.blocks_per_stage[s]; ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b);
      Block blk;
      blk.norm1 = norm(bp + ".norm1", dims[s]);
      if (config_.mixer == MixerKind::WindowedAttention) {
        blk.qkv = linear(bp + ".qkv", dims[s], 3 * dims[s]);
        blk.proj = linear(bp + ".attn_proj", dims[s], dims[s]);
      }
      blk.norm2 = norm(bp + ".norm2", dims[s]);
      blk.fc1 = linear(bp + ".fc1", dims[s], config_.mlp_ratio * dims[s]);
      blk.fc2 = linear(bp + ".fc2", config_.mlp_ratio * dims[s], dims[s]);
      st.blocks.push_back(blk);
    }
  }
  for (int s = 0; s < kStages; ++s)
    laterals_[s] = linear("decoder.lateral" + std::to_string(s + 1), dims[s], config_.decoder_dim);
  const int sub = config_.patch_size(1);
  head_ = linear("decoder.head", config_.decoder_dim, sub * sub * config_.class_count);

  Init proj_init(params_, seed ^ kProjectionStream);
  for (int s = 0; s < kStages; ++s) {
    const std::string p = "projection.stage" + std::to_string(s + 1);
    const int n = config_.projection_dim;
    proj1_[s] = {proj_init.weight(p + ".fc1.weight", dims[s], n), proj_init.constant(p + ".fc1.bias", n, 0.0f)};
    proj2_[s] = {proj_init.weight(p + ".fc2.weight", n, n), proj_init.constant(p + ".fc2.bias", n, 0.0f)};
  }
}

bool SegmentationModel::is_projection_leaf(const std::string& name) { return name.rfind("projection.", 0) == 0; }
bool SegmentationModel::is_decoder_leaf(const std::string& name) { return name.rfind("decoder.", 0) == 0; }

Tensor SegmentationModel::attention(const Block& blk, const Tensor& x, int dim) const {
  const auto B = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ws = std::min<std::int64_t>(config_.window, h);
  const auto nh = h / ws, nw = w / ws;
  const auto heads = std::max(1, dim / config_.head_dim);
  const auto hd = dim / heads;
  const auto groups = B * nh * nw * heads;
  const auto T = ws * ws;

  Tensor qkv = ops::linear(x, blk.qkv.weight, blk.qkv.bias);
  qkv = ops::reshape(qkv, {B, nh, ws, nw, ws, 3, heads, hd});
  // -> [3, B, nh, nw, heads, ws, ws, hd]
  qkv = ops::permute(qkv, {5, 0, 1, 3, 6, 2, 4, 7});
  qkv = ops::reshape(qkv, {3 * groups, T, hd});
  const Tensor q = ops::slice(qkv, 0, 0, groups);
  const Tensor k = ops::slice(qkv, 0, groups, 2 * groups);
  const Tensor v = ops::slice(qkv, 0, 2 * groups, 3 * groups);
  Tensor attn = ops::scale(ops::matmul(q, k, false, true), 1.0f / std::sqrt(static_cast<float>(hd)));
  attn = ops::softmax(attn, -1);
  Tensor out = ops::matmul(attn, v);
  out = ops::reshape(out, {B, nh, nw, heads, ws, ws, hd});
  // -> [B, nh, ws, nw, ws, heads, hd]
  out = ops::permute(out, {0, 1, 4, 2, 5, 3, 6});
  out = ops::reshape(out, {B, h, w, dim});
  return ops::linear(out, blk.proj.weight, blk.proj.bias);
}

Tensor SegmentationModel::run_block(const Block& blk, const Tensor& x, int dim) const {
  Tensor y = ops::layer_norm(x, blk.norm1.gamma, blk.norm1.beta);
  if (config_.mixer == MixerKind::WindowedAttention) y = attention(blk, y, dim);
  else y = ops::sub(ops::avg_pool3x3(y), y);
  Tensor out = ops::add(x, y);
  y = ops::layer_norm(out, blk.norm2.gamma, blk.norm2.beta);
  y = ops::gelu(ops::linear(y, blk.fc1.weight, blk.fc1.bias));
  y = ops::linear(y, blk.fc2.weight, blk.fc2.bias);
  return ops::add(out, y);
}

StageFeatures SegmentationModel::backbone_forward(const Tensor& images) const {
  const int side = config_.image_side;
  if (images.rank() != 4 || images.dim(1) != side || images.dim(2) != side || images.dim(3) != 3) {
    throw ShapeError("backbone_forward: expected [B," + std::to_string(side) + "," + std::to_string(side) +
                     ",3], got " + ct::to_string(images.shape()));
  }
  StageFeatures f;
  // inputs are data, never trained through
  std::vector<float> px(images.values().begin(), images.values().end());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = (px[i] - config_.pixel_mean[i % 3]) / config_.pixel_std[i % 3];
  Tensor x = ops::space_to_depth(Tensor::from(images.shape(), std::move(px)), 4);
  x = ops::linear(x, stages_[0].merge.weight, stages_[0].merge.bias);
  x = ops::layer_norm(x, stem_norm_.gamma, stem_norm_.beta);
  for (int s = 0; s < kStages; ++s) {
    const auto& st = stages_[s];
    if (s > 0) {
      x = ops::space_to_depth(x, 2);
      x = ops::layer_norm(x, st.merge_norm.gamma, st.merge_norm.beta);
      x = ops::linear(x, st.merge.weight, st.merge.bias);
    }
    for (const auto& blk : st.blocks) x = run_block(blk, x, config_.stage_dims[s]);
    f.tokens[s] = x;
  }
  return f;
}

StageFeatures SegmentationModel::project(StageFeatures features) const {
  if (!training_) throw Error("project: projection heads are training-only and unavailable in inference mode");
  for (int s = 0; s < kStages; ++s) {
    Tensor y = ops::gelu(ops::linear(features.tokens[s], proj1_[s].weight, proj1_[s].bias));
    features.embeddings[s] = ops::linear(y, proj2_[s].weight, proj2_[s].bias);
  }
  features.projected = true;
  return features;
}

Tensor SegmentationModel::decode(const StageFeatures& features) const {
  for (int s = 0; s < kStages; ++s) {
    const auto& z = features.tokens[s];
    if (!z.defined() || z.rank() != 4 || z.dim(1) != config_.grid_side(s + 1) || z.dim(3) != config_.stage_dims[s]) {
      throw ShapeError("decode: stage " + std::to_string(s + 1) + " tokens have unexpected shape " +
                       (z.defined() ? ct::to_string(z.shape()) : std::string("<missing>")));
    }
  }
  Tensor p = ops::linear(features.tokens[kStages - 1], laterals_[kStages - 1].weight, laterals_[kStages - 1].bias);
  for (int s = kStages - 2; s >= 0; --s) {
    const Tensor lateral = ops::linear(features.tokens[s], laterals_[s].weight, laterals_[s].bias);
    p = ops::add(lateral, ops::upsample_nearest(p, 2));
  }
  // Sub-pixel head: each stage-1 token emits logits for its 4x4 pixels.
  const std::int64_t sub = config_.patch_size(1), k = config_.class_count;
  const auto B = p.dim(0), h = p.dim(1), w = p.dim(2);
  Tensor logits = ops::linear(ops::gelu(p), head_.weight, head_.bias);
  logits = ops::reshape(logits, {B, h, w, sub, sub, k});
  logits = ops::permute(logits, {0, 1, 3, 2, 4, 5});
  return ops::reshape(logits, {B, h * sub, w * sub, k});
}

}  // namespace ct::model
