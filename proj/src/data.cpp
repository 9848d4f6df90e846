#include "ct/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "ct/rng.hpp"
#include "ct/tensor.hpp"

namespace ct::data {

namespace fs = std::filesystem;
using Rgb = std::array<float, 3>;

std::map<std::string, int> default_palette() {
  return {{"surface", kSurface}, {"building", kBuilding}, {"low_vegetation", kLowVegetation},
          {"tree", kTree},       {"car", kCar},           {"clutter", kClutter}};
}

std::vector<std::string> class_names(const std::map<std::string, int>& palette) {
  int max_id = -1;
  for (const auto& [name, id] : palette) max_id = std::max(max_id, id);
  std::vector<std::string> names(static_cast<std::size_t>(max_id + 1));
  for (std::size_t i = 0; i < names.size(); ++i) names[i] = "class" + std::to_string(i);
  for (const auto& [name, id] : palette) names[static_cast<std::size_t>(id)] = name;
  return names;
}

void SceneConfig::validate() const {
  if (image_side <= 0) throw Error("scene: image_side must be positive");
  for (const auto* r : {&buildings, &low_vegetation, &trees, &cars, &clutter, &car_size}) {
    if (r->min < 0 || r->max < r->min) throw Error("scene: count ranges need 0 <= min <= max");
  }
  if (car_size.min < 1) throw Error("scene: car_size.min must be at least 1");
  if (car_size.max >= finest_patch) {
    throw Error("scene: car_size.max " + std::to_string(car_size.max) +
                " must stay below the finest patch size " + std::to_string(finest_patch) +
                " so cars never fill a finest-stage patch");
  }
}

namespace {

class Painter {
 public:
  Painter(Sample& s, std::mt19937_64& rng) : s_(s), rng_(rng) {}

  float uniform(float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  int count(CountRange r) { return uniform_int(r.min, r.max); }

  Rgb jitter(Rgb base, float amount) {
    const float shared = uniform(-amount, amount);
    for (auto& c : base) c = c + shared + uniform(-amount, amount) * 0.5f;
    return base;
  }

  void paint(int r, int c, std::uint8_t cls, const Rgb& color, float noise) {
    if (r < 0 || c < 0 || r >= s_.mask.height || c >= s_.mask.width) return;
    s_.mask.at(r, c) = cls;
    std::normal_distribution<float> n(0.0f, noise);
    for (int ch = 0; ch < 3; ++ch) s_.image.at(r, c, ch) = color[ch] + (noise > 0.0f ? n(rng_) : 0.0f);
  }

  std::uint8_t cls(int r, int c) const { return s_.mask.at(r, c); }
  int side() const { return s_.mask.height; }

 private:
  Sample& s_;
  std::mt19937_64& rng_;
};

void draw_blob(Painter& p, std::uint8_t cls, Rgb color, float noise, float min_r, float max_r) {
  const int side = p.side();
  const float cy = p.uniform(0.0f, static_cast<float>(side));
  const float cx = p.uniform(0.0f, static_cast<float>(side));
  const float ry = p.uniform(min_r, max_r);
  const float rx = p.uniform(min_r, max_r);
  const float wobble = p.uniform(0.0f, 0.25f);
  const float phase = p.uniform(0.0f, 6.2831853f);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const float dy = (static_cast<float>(r) + 0.5f - cy) / ry;
      const float dx = (static_cast<float>(c) + 0.5f - cx) / rx;
      const float angle = std::atan2(dy, dx);
      const float limit = 1.0f + wobble * std::sin(3.0f * angle + phase);
      if (dx * dx + dy * dy <= limit * limit) p.paint(r, c, cls, color, noise);
    }
}

void draw_building(Painter& p, float scale) {
  const int side = p.side();
  const int h = std::max(2, static_cast<int>(p.uniform(8.0f, 22.0f) * scale));
  const int w = std::max(2, static_cast<int>(p.uniform(8.0f, 22.0f) * scale));
  const int r0 = p.uniform_int(-h / 3, side - 1 - h / 2);
  const int c0 = p.uniform_int(-w / 3, side - 1 - w / 2);
  const bool red_roof = p.uniform(0.0f, 1.0f) < 0.5f;
  const Rgb base = red_roof ? Rgb{0.66f, 0.36f, 0.30f} : Rgb{0.72f, 0.72f, 0.74f};
  const Rgb roof = p.jitter(base, 0.05f);
  // Two roof faces split along the longer side.
  const Rgb shade{roof[0] * 0.85f, roof[1] * 0.85f, roof[2] * 0.85f};
  for (int r = r0; r < r0 + h; ++r)
    for (int c = c0; c < c0 + w; ++c) {
      const bool second = h > w ? (c - c0) * 2 >= w : (r - r0) * 2 >= h;
      p.paint(r, c, kBuilding, second ? shade : roof, 0.015f);
    }
}

void draw_clutter(Painter& p, float scale) {
  const int side = p.side();
  const int length = std::max(3, static_cast<int>(p.uniform(6.0f, 16.0f) * scale));
  const int thickness = p.uniform_int(1, 2);
  const bool horizontal = p.uniform(0.0f, 1.0f) < 0.5f;
  const int r0 = p.uniform_int(0, side - 1);
  const int c0 = p.uniform_int(0, side - 1);
  const Rgb color{p.uniform(0.1f, 0.9f), p.uniform(0.1f, 0.9f), p.uniform(0.1f, 0.9f)};
  for (int a = 0; a < length; ++a)
    for (int t = 0; t < thickness; ++t) {
      if (horizontal) p.paint(r0 + t, c0 + a, kClutter, color, 0.03f);
      else p.paint(r0 + a, c0 + t, kClutter, color, 0.03f);
    }
}

// Cars sit on surface pixels with a one-pixel surface margin, so every car
// is its own connected component no larger than car_size.max on a side.
void draw_cars(Painter& p, const SceneConfig& cfg) {
  const int side = p.side();
  const int wanted = p.count(cfg.cars);
  int placed = 0;
  for (int attempt = 0; attempt < wanted * 20 && placed < wanted; ++attempt) {
    const int h = p.uniform_int(cfg.car_size.min, cfg.car_size.max);
    const int w = p.uniform_int(cfg.car_size.min, cfg.car_size.max);
    const int r0 = p.uniform_int(0, side - h);
    const int c0 = p.uniform_int(0, side - w);
    bool clear = true;
    for (int r = std::max(0, r0 - 1); clear && r <= std::min(side - 1, r0 + h); ++r)
      for (int c = std::max(0, c0 - 1); clear && c <= std::min(side - 1, c0 + w); ++c) clear = p.cls(r, c) == kSurface;
    if (!clear) continue;
    const Rgb color = p.uniform(0.0f, 1.0f) < 0.5f
                          ? Rgb{p.uniform(0.05f, 0.2f), p.uniform(0.05f, 0.2f), p.uniform(0.05f, 0.25f)}
                          : Rgb{p.uniform(0.6f, 0.95f), p.uniform(0.1f, 0.95f), p.uniform(0.1f, 0.95f)};
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c) p.paint(r, c, kCar, color, 0.02f);
    ++placed;
  }
}

float quantize(float v) { return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f; }

}  // namespace

Sample generate_scene(const SceneConfig& cfg, std::mt19937_64& rng, std::string id) {
  cfg.validate();
  const int side = cfg.image_side;
  Sample s{Image(side, side), Mask(side, side, kSurface), std::move(id)};
  Painter p(s, rng);
  const float scale = static_cast<float>(side) / 64.0f;

  const Rgb ground = p.jitter({0.55f, 0.54f, 0.50f}, 0.04f);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) p.paint(r, c, kSurface, ground, 0.03f);

  for (int i = p.count(cfg.low_vegetation); i > 0; --i)
    draw_blob(p, kLowVegetation, p.jitter({0.48f, 0.60f, 0.32f}, 0.04f), 0.035f, 5.0f * scale, 13.0f * scale);
  for (int i = p.count(cfg.buildings); i > 0; --i) draw_building(p, scale);
  for (int i = p.count(cfg.trees); i > 0; --i)
    draw_blob(p, kTree, p.jitter({0.22f, 0.40f, 0.18f}, 0.04f), 0.07f, 2.5f * scale, 7.0f * scale);
  for (int i = p.count(cfg.clutter); i > 0; --i) draw_clutter(p, scale);
  draw_cars(p, cfg);

  for (auto& v : s.image.values) v = quantize(v);
  return s;
}

std::vector<Sample> generate_samples(const SceneConfig& cfg, std::size_t count, std::uint64_t stream,
                                     const std::string& prefix) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {stream, i}));
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%05zu", i);
    out.push_back(generate_scene(cfg, rng, prefix + buf));
  }
  return out;
}

std::vector<std::array<int, 2>> tile_origins(int height, int width, int tile) {
  if (tile <= 0 || tile > height || tile > width)
    throw Error("tile: tile size " + std::to_string(tile) + " does not fit raster " + std::to_string(height) + "x" +
                std::to_string(width));
  std::vector<std::array<int, 2>> out;
  for (int r = 0; r + tile <= height; r += tile)
    for (int c = 0; c + tile <= width; c += tile) out.push_back({r, c});
  return out;
}

Image resize_bilinear(const Image& in, int out_h, int out_w) {
  if (out_h == in.height && out_w == in.width) return in;
  Image out(out_h, out_w, in.channels);
  const float sy = static_cast<float>(in.height) / static_cast<float>(out_h);
  const float sx = static_cast<float>(in.width) / static_cast<float>(out_w);
  for (int r = 0; r < out_h; ++r) {
    const float fy = std::clamp((static_cast<float>(r) + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(in.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const float wy = fy - static_cast<float>(y0);
    for (int c = 0; c < out_w; ++c) {
      const float fx = std::clamp((static_cast<float>(c) + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(in.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const float wx = fx - static_cast<float>(x0);
      for (int ch = 0; ch < in.channels; ++ch) {
        const float top = in.at(y0, x0, ch) * (1.0f - wx) + in.at(y0, x1, ch) * wx;
        const float bottom = in.at(y1, x0, ch) * (1.0f - wx) + in.at(y1, x1, ch) * wx;
        out.at(r, c, ch) = top * (1.0f - wy) + bottom * wy;
      }
    }
  }
  return out;
}

Mask resize_nearest(const Mask& in, int out_h, int out_w) {
  if (out_h == in.height && out_w == in.width) return in;
  Mask out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    const int y = std::min(in.height - 1, static_cast<int>((static_cast<std::int64_t>(r) * 2 + 1) * in.height / (2 * out_h)));
    for (int c = 0; c < out_w; ++c) {
      const int x = std::min(in.width - 1, static_cast<int>((static_cast<std::int64_t>(c) * 2 + 1) * in.width / (2 * out_w)));
      out.at(r, c) = in.at(y, x);
    }
  }
  return out;
}

std::vector<Sample> tile_and_resize(const Image& image, const Mask& mask, int tile, int out,
                                    const std::string& id_prefix) {
  if (image.height != mask.height || image.width != mask.width) {
    throw Error("tile_and_resize: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                " and mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + " differ in size");
  }
  if (out < tile) throw Error("tile_and_resize: output size must be at least the tile size");
  std::vector<Sample> samples;
  for (const auto& [r0, c0] : tile_origins(image.height, image.width, tile)) {
    Image crop(tile, tile, image.channels);
    Mask mcrop(tile, tile);
    for (int r = 0; r < tile; ++r) {
      std::copy_n(image.values.begin() + (static_cast<std::size_t>(r0 + r) * image.width + c0) * image.channels,
                  static_cast<std::size_t>(tile) * image.channels,
                  crop.values.begin() + static_cast<std::size_t>(r) * tile * image.channels);
      std::copy_n(mask.ids.begin() + static_cast<std::size_t>(r0 + r) * mask.width + c0, tile,
                  mcrop.ids.begin() + static_cast<std::size_t>(r) * tile);
    }
    samples.push_back({resize_bilinear(crop, out, out), resize_nearest(mcrop, out, out),
                       id_prefix + "_r" + std::to_string(r0 / tile) + "_c" + std::to_string(c0 / tile)});
  }
  return samples;
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  throw Error("dataset: unknown split '" + name + "' (expected train or test)");
}

void save_sample(const fs::path& dir, const Sample& sample) {
  write_image_png(dir / "images" / (sample.id + ".png"), sample.image);
  write_mask_png(dir / "masks" / (sample.id + ".png"), sample.mask);
}

Sample load_sample(const fs::path& dir, const std::string& id) {
  const auto image_path = dir / "images" / (id + ".png");
  const auto mask_path = dir / "masks" / (id + ".png");
  if (!fs::exists(mask_path)) throw Error("dataset: missing mask for image '" + id + "' (" + mask_path.string() + ")");
  if (!fs::exists(image_path)) throw Error("dataset: missing image for id '" + id + "' (" + image_path.string() + ")");
  Sample s{read_image_png(image_path), read_mask_png(mask_path), id};
  if (s.image.height != s.mask.height || s.image.width != s.mask.width)
    throw Error("dataset: image and mask sizes differ for '" + id + "'");
  return s;
}

void save_dataset(const fs::path& dir, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const std::map<std::string, int>& palette) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  nlohmann::json manifest;
  manifest["train"] = nlohmann::json::array();
  manifest["test"] = nlohmann::json::array();
  for (const auto& s : train) {
    save_sample(dir, s);
    manifest["train"].push_back(s.id);
  }
  for (const auto& s : test) {
    save_sample(dir, s);
    manifest["test"].push_back(s.id);
  }
  manifest["palette"] = palette;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw Error("dataset: cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Manifest load_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error("dataset: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    Manifest m;
    m.train = j.value("train", std::vector<std::string>{});
    m.test = j.value("test", std::vector<std::string>{});
    m.palette = j.value("palette", default_palette());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("dataset: malformed " + path.string() + ": " + e.what());
  }
}

std::vector<Sample> load_dataset(const fs::path& dir, Split split) {
  if (!fs::exists(dir)) throw Error("dataset: directory " + dir.string() + " does not exist");
  if (!fs::exists(dir / "manifest.json")) {
    if (fs::is_empty(dir)) return {};
    throw Error("dataset: " + dir.string() + " has no manifest.json");
  }
  const Manifest m = load_manifest(dir);
  auto ids = split == Split::Train ? m.train : m.test;
  std::sort(ids.begin(), ids.end());
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(load_sample(dir, id));
  return out;
}

}  // namespace ct::data
