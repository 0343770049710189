#pragma once

// 8-bit RGB raster images and the two on-disk codecs the toolkit speaks:
// binary PPM (P6, maxval 255) and non-interlaced 8-bit PNG.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace leafcam {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, RGB interleaved

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

RgbImage decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

// Accepts bit depth 8 with color type 2 (RGB), 6 (RGBA, alpha dropped) or
// 0 (gray); interlaced files are rejected.
RgbImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const RgbImage& image);

// Dispatches on the file signature. Throws a data error on anything else.
RgbImage decode_image(std::span<const std::uint8_t> bytes);

RgbImage read_image(const std::filesystem::path& path);

}  // namespace leafcam
