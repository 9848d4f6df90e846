#include <png.h>

#include <cmath>
#include <cstring>

#include "ct/data.hpp"
#include "ct/tensor.hpp"

namespace ct::data {

namespace {

void write_png(const std::filesystem::path& path, int width, int height, png_uint_32 format,
               const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw Error("png: cannot write " + path.string() + ": " + img.message);
  }
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, int& width, int& height) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error("png: cannot read " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error("png: cannot decode " + path.string() + ": " + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return bytes;
}

}  // namespace

void write_image_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw Error("png: only RGB images can be written, got " + std::to_string(image.channels) + " channels");
  std::vector<std::uint8_t> bytes(image.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.values[i], 0.0f, 1.0f) * 255.0f));
  write_png(path, image.width, image.height, PNG_FORMAT_RGB, bytes);
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  write_png(path, mask.width, mask.height, PNG_FORMAT_GRAY, mask.ids);
}

Image read_image_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = read_png(path, PNG_FORMAT_RGB, w, h);
  Image out(h, w, 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) out.values[i] = static_cast<float>(bytes[i]) / 255.0f;
  return out;
}

Mask read_mask_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_png(path, PNG_FORMAT_GRAY, w, h);
  Mask out(h, w);
  out.ids = std::move(bytes);
  return out;
}

}  // namespace ct::data
