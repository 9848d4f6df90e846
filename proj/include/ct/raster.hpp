#pragma once

#include <cstdint>
#include <vector>

namespace ct {

inline constexpr std::uint8_t kIgnoreLabel = 255;

// H x W class-id raster, row-major.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> ids;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), ids(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::uint8_t at(int row, int col) const { return ids[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t& at(int row, int col) { return ids[static_cast<std::size_t>(row) * width + col]; }
  bool operator==(const Mask&) const = default;
};

// H x W x C raster of reals in [0, 1], channels-last.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> values;

  Image() = default;
  Image(int h, int w, int c = 3)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, 0.0f) {}

  float at(int row, int col, int ch) const {
    return values[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  float& at(int row, int col, int ch) { return values[(static_cast<std::size_t>(row) * width + col) * channels + ch]; }
  bool operator==(const Image&) const = default;
};

}  // namespace ct
