#pragma once

#include <bitset>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ct/raster.hpp"

namespace ct::patching {

inline constexpr int kDefaultPatchSizes[] = {4, 8, 16, 32};

struct StageSpec {
  int stage = 1;  // 1-based
  int patch_size = 4;
  int grid_h = 0;
  int grid_w = 0;

  int patch_count() const { return grid_h * grid_w; }
  bool operator==(const StageSpec&) const = default;
};

// Builds one spec per patch size; throws if a size does not divide the image.
std::vector<StageSpec> stage_specs(int height, int width, std::span<const int> patch_sizes);
std::vector<StageSpec> default_stage_specs(int image_side);
std::int64_t total_patch_count(std::span<const StageSpec> specs);

using ClassSet = std::bitset<256>;

struct PatchEntry {
  ClassSet classes_present;  // ignore-label pixels never count as presence
  bool has_ignore = false;
  std::optional<std::uint8_t> homogeneous_class;
};

struct GridIndex {
  int row = 0;
  int col = 0;
  auto operator<=>(const GridIndex&) const = default;
};

struct PatchLabelGrid {
  StageSpec stage;
  std::vector<PatchEntry> entries;  // row-major, grid_h x grid_w

  const PatchEntry& at(int row, int col) const { return entries[static_cast<std::size_t>(row) * stage.grid_w + col]; }
  const PatchEntry& at(GridIndex g) const { return at(g.row, g.col); }
  int flat(GridIndex g) const { return g.row * stage.grid_w + g.col; }
  GridIndex index_of(int flat) const { return {flat / stage.grid_w, flat % stage.grid_w}; }
  ClassSet classes() const;
};

PatchLabelGrid build_patch_grid(const Mask& mask, const StageSpec& spec);
std::vector<PatchLabelGrid> build_patch_grids(const Mask& mask, std::span<const StageSpec> specs);

// Patches whose pixels all carry class c (row-major order).
std::vector<GridIndex> positive_indices(const PatchLabelGrid& grid, std::uint8_t c);
// Patches with no pixel of class c; heterogeneous patches qualify.
std::vector<GridIndex> negative_indices(const PatchLabelGrid& grid, std::uint8_t c);

}  // namespace ct::patching
