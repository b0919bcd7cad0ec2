#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vod/geometry.hpp"

namespace vod {

// 8-bit RGB raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

// Any PNG color type/bit depth is converted to 8-bit RGB. Throws IoError.
Image read_png(const std::filesystem::path& path);
ImageSize read_png_size(const std::filesystem::path& path);

// Creates parent directories. Output bytes depend only on the pixels.
void write_png(const std::filesystem::path& path, const Image& img);

Image crop(const Image& img, const PixelRect& r);

}  // namespace vod
