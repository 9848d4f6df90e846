#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ct/raster.hpp"

namespace ct::data {

// Synthetic stand-ins for the six aerial land-cover classes.
enum ClassId : std::uint8_t {
  kSurface = 0,
  kBuilding = 1,
  kLowVegetation = 2,
  kTree = 3,
  kCar = 4,
  kClutter = 5,
};

inline constexpr int kClassCount = 6;

std::map<std::string, int> default_palette();
std::vector<std::string> class_names(const std::map<std::string, int>& palette);

struct CountRange {
  int min = 0;
  int max = 0;
};

struct SceneConfig {
  int image_side = 64;
  std::map<std::string, int> palette = default_palette();
  CountRange buildings{1, 3};
  CountRange low_vegetation{1, 3};
  CountRange trees{1, 4};
  CountRange cars{3, 8};
  CountRange clutter{1, 2};
  CountRange car_size{1, 3};  // side in pixels
  int finest_patch = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sample {
  Image image;
  Mask mask;
  std::string id;
};

Sample generate_scene(const SceneConfig& cfg, std::mt19937_64& rng, std::string id = "scene");
// Sample i is drawn from its own stream derived from (cfg.seed, stream, i).
std::vector<Sample> generate_samples(const SceneConfig& cfg, std::size_t count, std::uint64_t stream,
                                     const std::string& prefix);

// Top-left corners of the non-overlapping tile x tile crops that fit fully.
std::vector<std::array<int, 2>> tile_origins(int height, int width, int tile);
std::vector<Sample> tile_and_resize(const Image& image, const Mask& mask, int tile, int out,
                                    const std::string& id_prefix = "tile");
Image resize_bilinear(const Image& image, int out_h, int out_w);
Mask resize_nearest(const Mask& mask, int out_h, int out_w);

struct Manifest {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::map<std::string, int> palette;
};

enum class Split { Train, Test };
Split split_from_string(const std::string& name);

// Layout: images/<id>.png, masks/<id>.png, manifest.json.
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const std::map<std::string, int>& palette);
Manifest load_manifest(const std::filesystem::path& dir);
std::vector<Sample> load_dataset(const std::filesystem::path& dir, Split split);

void save_sample(const std::filesystem::path& dir, const Sample& sample);
Sample load_sample(const std::filesystem::path& dir, const std::string& id);

// 8-bit PNG I/O. Images are RGB, masks single-channel.
void write_image_png(const std::filesystem::path& path, const Image& image);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Image read_image_png(const std::filesystem::path& path);
Mask read_mask_png(const std::filesystem::path& path);

}  // namespace ct::data
