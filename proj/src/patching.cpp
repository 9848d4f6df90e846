#include "ct/patching.hpp"

#include <string>

#include "ct/tensor.hpp"

namespace ct::patching {

std::vector<StageSpec> stage_specs(int height, int width, std::span<const int> patch_sizes) {
  std::vector<StageSpec> specs;
  int stage = 1;
  for (int p : patch_sizes) {
    if (p <= 0 || height % p != 0 || width % p != 0) {
      throw Error("patching: stage " + std::to_string(stage) + " patch size " + std::to_string(p) +
                  " does not divide image " + std::to_string(height) + "x" + std::to_string(width));
    }
    specs.push_back({stage++, p, height / p, width / p});
  }
  return specs;
}

std::vector<StageSpec> default_stage_specs(int image_side) {
  return stage_specs(image_side, image_side, kDefaultPatchSizes);
}

std::int64_t total_patch_count(std::span<const StageSpec> specs) {
  std::int64_t n = 0;
  for (const auto& s : specs) n += static_cast<std::int64_t>(s.grid_h) * s.grid_w;
  return n;
}

ClassSet PatchLabelGrid::classes() const {
  ClassSet all;
  for (const auto& e : entries) all |= e.classes_present;
  return all;
}

PatchLabelGrid build_patch_grid(const Mask& mask, const StageSpec& spec) {
  const int p = spec.patch_size;
  if (p <= 0 || mask.height % p != 0 || mask.width % p != 0 || spec.grid_h * p != mask.height ||
      spec.grid_w * p != mask.width) {
    throw Error("patching: stage " + std::to_string(spec.stage) + " patch size " + std::to_string(p) + " with grid " +
                std::to_string(spec.grid_h) + "x" + std::to_string(spec.grid_w) + " does not tile mask " +
                std::to_string(mask.height) + "x" + std::to_string(mask.width));
  }
  PatchLabelGrid grid{spec, std::vector<PatchEntry>(static_cast<std::size_t>(spec.grid_h) * spec.grid_w)};
  for (int i = 0; i < mask.height; ++i) {
    const int gi = i / p;
    for (int j = 0; j < mask.width; ++j) {
      auto& e = grid.entries[static_cast<std::size_t>(gi) * spec.grid_w + j / p];
      const auto id = mask.at(i, j);
      if (id == kIgnoreLabel) e.has_ignore = true;
      else e.classes_present.set(id);
    }
  }
  for (auto& e : grid.entries) {
    if (e.has_ignore || e.classes_present.count() != 1) continue;
    for (int c = 0; c < 255; ++c)
      if (e.classes_present.test(static_cast<std::size_t>(c))) e.homogeneous_class = static_cast<std::uint8_t>(c);
  }
  return grid;
}

std::vector<PatchLabelGrid> build_patch_grids(const Mask& mask, std::span<const StageSpec> specs) {
  std::vector<PatchLabelGrid> grids;
  grids.reserve(specs.size());
  for (const auto& s : specs) grids.push_back(build_patch_grid(mask, s));
  return grids;
}

std::vector<GridIndex> positive_indices(const PatchLabelGrid& grid, std::uint8_t c) {
  std::vector<GridIndex> out;
  for (int f = 0; f < static_cast<int>(grid.entries.size()); ++f) {
    const auto& e = grid.entries[static_cast<std::size_t>(f)];
    if (e.homogeneous_class && *e.homogeneous_class == c) out.push_back(grid.index_of(f));
  }
  return out;
}

std::vector<GridIndex> negative_indices(const PatchLabelGrid& grid, std::uint8_t c) {
  std::vector<GridIndex> out;
  for (int f = 0; f < static_cast<int>(grid.entries.size()); ++f) {
    const auto& e = grid.entries[static_cast<std::size_t>(f)];
    // A patch made only of ignore pixels carries no class evidence either way.
    if (e.classes_present.none()) continue;
    if (!e.classes_present.test(c)) out.push_back(grid.index_of(f));
  }
  return out;
}

}  // namespace ct::patching
