#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace iapnet {

// Single-channel row-major float raster.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h, fill) {}

  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool empty() const { return width == 0 || height == 0; }

  bool operator==(const Image&) const = default;
};

// Dispatches on extension: .png (8/16-bit, colour collapsed to luma) or
// .pgm (binary P5, 8/16-bit). Sample values are returned unscaled.
Image read_image(const std::filesystem::path& path);

// Writes values in [0,1] as 16-bit (or 8-bit) grayscale PNG, clamping.
void write_png(const Image& image, const std::filesystem::path& path, int bit_depth = 16);

// Writes a binary P5 PGM with the given maxval (<= 65535), values in [0,1].
void write_pgm(const Image& image, const std::filesystem::path& path, int maxval = 65535);

// Bilinear resampling with half-pixel centres.
Image resize_bilinear(const Image& src, std::size_t width, std::size_t height);

}  // namespace iapnet
