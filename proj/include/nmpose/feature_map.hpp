#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace nmpose {

// Dense c x h x w feature grid. Storage is pixel-major (row, column, channel)
// so one pixel's feature vector is contiguous; the on-disk blob is
// channel-major.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * width + x) * channels;
  }
  double* pixel(int x, int y) { return data.data() + offset(x, y); }
  const double* pixel(int x, int y) const { return data.data() + offset(x, y); }
  std::span<const double> feature(int x, int y) const {
    return {pixel(x, y), static_cast<std::size_t>(channels)};
  }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

// Raw "NMFM" blob: 16-byte header (magic, u32 c, u32 h, u32 w) followed by
// c*h*w little-endian f32 values, channel-major.
struct Blob {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;  // channel-major
};

void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path);

Blob to_blob(const FeatureMap& map);
FeatureMap from_blob(const Blob& blob);

}  // namespace nmpose
