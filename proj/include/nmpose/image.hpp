#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nmpose {

// 8-bit interleaved RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool operator==(const RgbImage&) const = default;
};

// Binary object mask, one byte per pixel holding 0 or 1.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double coverage() const;
  bool operator==(const Mask&) const = default;
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const Mask& mask);  // stored as {0, 255}
// Throw Error(kMissingFile) or Error(kIo).
RgbImage read_png_rgb(const std::filesystem::path& path);
Mask read_png_mask(const std::filesystem::path& path);

}  // namespace nmpose
