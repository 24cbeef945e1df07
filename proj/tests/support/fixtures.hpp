#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "nmpose/feature_map.hpp"
#include "nmpose/image.hpp"
#include "nmpose/neural_mesh.hpp"
#include "nmpose/raster.hpp"

namespace fixtures {

// 64 x 64 image, 8 x 8 feature map, unit sphere about 23 px in radius.
nmpose::Camera tiny_camera();
// The 256 x 256 camera used by the end-to-end gates.
nmpose::Camera gate_camera();

class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

nmpose::FeatureMap random_map(int channels, int height, int width, std::mt19937_64& rng, bool unit);
nmpose::RgbImage random_image(int width, int height, std::mt19937_64& rng);
std::vector<double> random_unit(int dim, std::mt19937_64& rng);

}  // namespace fixtures
