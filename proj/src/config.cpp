#include "ct/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>

namespace ct {

using nlohmann::json;

namespace {

// Shortest decimal that reads back as the same float, so dumps show 8e-05
// rather than 7.999999797903001e-05.
double tidy(float v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf - 1, v);
  *r.ptr = '\0';
  return std::strtod(buf, nullptr);
}

json tidy(const std::array<float, 3>& v) { return {tidy(v[0]), tidy(v[1]), tidy(v[2])}; }

}  // namespace

std::string to_string(ContrastiveMode mode) {
  switch (mode) {
    case ContrastiveMode::Off: return "off";
    case ContrastiveMode::InfoNce: return "infonce";
    case ContrastiveMode::Cl: return "cl";
  }
  return "?";
}

ContrastiveMode contrastive_mode_from_string(const std::string& name) {
  if (name == "off") return ContrastiveMode::Off;
  if (name == "infonce") return ContrastiveMode::InfoNce;
  if (name == "cl") return ContrastiveMode::Cl;
  throw ConfigError("config: unknown contrastive mode '" + name + "' (expected off, infonce or cl)");
}

std::string to_string(losses::ClipGradient mode) {
  return mode == losses::ClipGradient::Block ? "block" : "rescale";
}

losses::ClipGradient clip_gradient_from_string(const std::string& name) {
  if (name == "block") return losses::ClipGradient::Block;
  if (name == "rescale") return losses::ClipGradient::Rescale;
  throw ConfigError("config: unknown contrastive clip gradient '" + name + "' (expected block or rescale)");
}

namespace {

json range_json(data::CountRange r) { return {{"min", r.min}, {"max", r.max}}; }
data::CountRange range_from(const json& j) { return {j.at("min").get<int>(), j.at("max").get<int>()}; }

// Every key of `patch` must exist in `base` with a compatible type.
void merge_strict(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& target = base[it.key()];
    if (target.is_object()) {
      merge_strict(target, it.value(), key);
      continue;
    }
    const bool both_numbers = target.is_number() && it.value().is_number();
    const bool same_kind = target.type() == it.value().type();
    if (!both_numbers && !same_kind)
      throw ConfigError("config: key '" + key + "' expects " + std::string(target.type_name()) + ", got " +
                        it.value().type_name());
    if (target.is_number_integer() && !it.value().is_number_integer())
      throw ConfigError("config: key '" + key + "' expects an integer");
    target = it.value();
  }
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

json override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("config: override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq);
  json value = parse_override_value(assignment.substr(eq + 1));
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ConfigError("config: override key '" + key + "' has an empty segment");
    value = json{{*it, std::move(value)}};
  }
  return value;
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const model::ModelConfig& m) {
  return {{"mixer", model::to_string(m.mixer)},
          {"stage_dims", m.stage_dims},
          {"blocks_per_stage", m.blocks_per_stage},
          {"projection_dim", m.projection_dim},
          {"class_count", m.class_count},
          {"image_side", m.image_side},
          {"window", m.window},
          {"head_dim", m.head_dim},
          {"mlp_ratio", m.mlp_ratio},
          {"decoder_dim", m.decoder_dim},
          {"pixel_mean", tidy(m.pixel_mean)},
          {"pixel_std", tidy(m.pixel_std)}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig m;
  try {
    m.mixer = model::mixer_from_string(get<std::string>(j, "mixer"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  m.stage_dims = get<std::array<int, model::kStages>>(j, "stage_dims");
  m.blocks_per_stage = get<std::array<int, model::kStages>>(j, "blocks_per_stage");
  m.projection_dim = get<int>(j, "projection_dim");
  m.class_count = get<int>(j, "class_count");
  m.image_side = get<int>(j, "image_side");
  m.window = get<int>(j, "window");
  m.head_dim = get<int>(j, "head_dim");
  m.mlp_ratio = get<int>(j, "mlp_ratio");
  m.decoder_dim = get<int>(j, "decoder_dim");
  m.pixel_mean = get<std::array<float, 3>>(j, "pixel_mean");
  m.pixel_std = get<std::array<float, 3>>(j, "pixel_std");
  return m;
}

json to_json(const ExperimentConfig& cfg) {
  const auto& s = cfg.data.scene;
  const auto& t = cfg.train;
  json modes = json::array(), mixers = json::array();
  for (auto m : cfg.compare.modes) modes.push_back(to_string(m));
  for (auto m : cfg.compare.mixers) mixers.push_back(model::to_string(m));
  return {
      {"model", to_json(cfg.model)},
      {"data",
       {{"train_samples", cfg.data.train_samples},
        {"test_samples", cfg.data.test_samples},
        {"seed", s.seed},
        {"palette", s.palette},
        {"buildings", range_json(s.buildings)},
        {"low_vegetation", range_json(s.low_vegetation)},
        {"trees", range_json(s.trees)},
        {"cars", range_json(s.cars)},
        {"clutter", range_json(s.clutter)},
        {"car_size", range_json(s.car_size)}}},
      {"train",
       {{"contrastive_mode", to_string(t.contrastive_mode)},
        {"lr", tidy(t.lr)},
        {"beta1", tidy(t.beta1)},
        {"beta2", tidy(t.beta2)},
        {"weight_decay", tidy(t.weight_decay)},
        {"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"seeds", t.seeds},
        {"grad_clip", tidy(t.grad_clip)},
        {"contrastive_clip", tidy(t.contrastive_clip)},
        {"contrastive_clip_gradient", to_string(t.contrastive_clip_gradient)},
        {"tau", tidy(t.tau)},
        {"smoothing", tidy(t.smoothing)},
        {"stage_enable", t.stage_enable},
        {"candidate_cap", t.candidate_cap},
        {"pair_budget", t.pair_budget}}},
      {"eval", {{"miou_classes", cfg.eval.miou_classes}, {"sub_patch_class", cfg.eval.sub_patch_class}}},
      {"compare", {{"modes", modes}, {"mixers", mixers}}},
  };
}

namespace {

ExperimentConfig from_json(const json& j) {
  ExperimentConfig cfg;
  cfg.model = model_config_from_json(j.at("model"));
  const auto& d = j.at("data");
  cfg.data.train_samples = get<std::size_t>(d, "train_samples");
  cfg.data.test_samples = get<std::size_t>(d, "test_samples");
  auto& s = cfg.data.scene;
  s.seed = get<std::uint64_t>(d, "seed");
  s.palette = get<std::map<std::string, int>>(d, "palette");
  try {
    s.buildings = range_from(d.at("buildings"));
    s.low_vegetation = range_from(d.at("low_vegetation"));
    s.trees = range_from(d.at("trees"));
    s.cars = range_from(d.at("cars"));
    s.clutter = range_from(d.at("clutter"));
    s.car_size = range_from(d.at("car_size"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad count range: ") + e.what());
  }
  const auto& t = j.at("train");
  auto& tr = cfg.train;
  tr.contrastive_mode = contrastive_mode_from_string(get<std::string>(t, "contrastive_mode"));
  tr.lr = get<float>(t, "lr");
  tr.beta1 = get<float>(t, "beta1");
  tr.beta2 = get<float>(t, "beta2");
  tr.weight_decay = get<float>(t, "weight_decay");
  tr.batch_size = get<int>(t, "batch_size");
  tr.epochs = get<int>(t, "epochs");
  tr.seeds = get<std::vector<std::uint64_t>>(t, "seeds");
  tr.grad_clip = get<float>(t, "grad_clip");
  tr.contrastive_clip = get<float>(t, "contrastive_clip");
  tr.contrastive_clip_gradient = clip_gradient_from_string(get<std::string>(t, "contrastive_clip_gradient"));
  tr.tau = get<float>(t, "tau");
  tr.smoothing = get<float>(t, "smoothing");
  tr.stage_enable = get<std::array<bool, model::kStages>>(t, "stage_enable");
  tr.candidate_cap = get<std::size_t>(t, "candidate_cap");
  tr.pair_budget = get<std::size_t>(t, "pair_budget");
  const auto& e = j.at("eval");
  cfg.eval.miou_classes = get<std::vector<std::string>>(e, "miou_classes");
  cfg.eval.sub_patch_class = get<std::string>(e, "sub_patch_class");
  const auto& c = j.at("compare");
  cfg.compare.modes.clear();
  cfg.compare.mixers.clear();
  for (const auto& m : get<std::vector<std::string>>(c, "modes")) cfg.compare.modes.push_back(contrastive_mode_from_string(m));
  for (const auto& m : get<std::vector<std::string>>(c, "mixers")) {
    try {
      cfg.compare.mixers.push_back(model::mixer_from_string(m));
    } catch (const Error& err) {
      throw ConfigError(err.what());
    }
  }
  return cfg;
}

}  // namespace

data::SceneConfig ExperimentConfig::scene() const {
  data::SceneConfig s = data.scene;
  s.image_side = model.image_side;
  s.finest_patch = model.patch_size(1);
  return s;
}

std::vector<std::string> ExperimentConfig::class_names() const {
  auto names = data::class_names(data.scene.palette);
  names.resize(static_cast<std::size_t>(model.class_count));
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i].empty()) names[i] = "class" + std::to_string(i);
  return names;
}

std::vector<int> ExperimentConfig::miou_class_ids() const {
  std::vector<int> ids;
  const auto names = class_names();
  for (const auto& n : eval.miou_classes) {
    const auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw ConfigError("config: eval.miou_classes names unknown class '" + n + "'");
    ids.push_back(static_cast<int>(it - names.begin()));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

int ExperimentConfig::sub_patch_class_id() const {
  const auto names = class_names();
  const auto it = std::find(names.begin(), names.end(), eval.sub_patch_class);
  if (it == names.end()) throw ConfigError("config: eval.sub_patch_class names unknown class '" + eval.sub_patch_class + "'");
  return static_cast<int>(it - names.begin());
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    scene().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& [name, id] : data.scene.palette)
    if (id < 0 || id >= model.class_count)
      throw ConfigError("config: palette class '" + name + "' id " + std::to_string(id) + " outside model.class_count");
  if (data.train_samples == 0 && data.test_samples == 0) throw ConfigError("config: data needs at least one sample");
  const auto& t = train;
  if (!(t.lr >= 0.0f)) throw ConfigError("config: train.lr must be non-negative");
  if (!(t.beta1 >= 0.0f && t.beta1 < 1.0f && t.beta2 >= 0.0f && t.beta2 < 1.0f))
    throw ConfigError("config: train.beta1 and train.beta2 must lie in [0, 1)");
  if (t.batch_size <= 0) throw ConfigError("config: train.batch_size must be positive");
  if (t.epochs < 0) throw ConfigError("config: train.epochs must be non-negative");
  if (t.seeds.empty()) throw ConfigError("config: train.seeds needs at least one seed");
  if (!(t.grad_clip > 0.0f)) throw ConfigError("config: train.grad_clip must be positive");
  if (!(t.contrastive_clip > 0.0f)) throw ConfigError("config: train.contrastive_clip must be positive");
  if (!(t.tau > 0.0f)) throw ConfigError("config: train.tau must be positive");
  if (!(t.smoothing >= 0.0f && t.smoothing < 1.0f)) throw ConfigError("config: train.smoothing must lie in [0, 1)");
  if (t.candidate_cap == 0 || t.pair_budget == 0)
    throw ConfigError("config: train.candidate_cap and train.pair_budget must be positive");
  if (eval.miou_classes.empty()) throw ConfigError("config: eval.miou_classes must not be empty");
  miou_class_ids();
  sub_patch_class_id();
  if (compare.modes.empty() || compare.mixers.empty()) throw ConfigError("config: compare needs modes and mixers");
}

ExperimentConfig load_config(const json& file, const std::vector<std::string>& overrides) {
  json merged = to_json(ExperimentConfig{});
  if (!file.is_null()) merge_strict(merged, file, "");
  for (const auto& o : overrides) merge_strict(merged, override_patch(o), "");
  ExperimentConfig cfg = from_json(merged);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config_file(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return load_config(j, overrides);
}

}  // namespace ct
