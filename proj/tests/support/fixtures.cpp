#include "fixtures.hpp"

#include <cmath>
#include <unistd.h>

namespace fixtures {

nmpose::Camera tiny_camera() { return nmpose::Camera{4.0, 92.0, 64, 64, 8}; }
nmpose::Camera gate_camera() { return nmpose::Camera{4.0, 368.0, 256, 256, 8}; }

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = std::filesystem::temp_directory_path() /
          ("nmpose_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

nmpose::FeatureMap random_map(int channels, int height, int width, std::mt19937_64& rng, bool unit) {
  std::normal_distribution<double> g;
  nmpose::FeatureMap map(channels, height, width);
  for (auto& v : map.data) v = g(rng);
  if (unit) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double* p = map.pixel(x, y);
        double n = 0;
        for (int c = 0; c < channels; ++c) n += p[c] * p[c];
        n = std::sqrt(n);
        for (int c = 0; c < channels; ++c) p[c] /= n;
      }
    }
  }
  return map;
}

nmpose::RgbImage random_image(int width, int height, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  nmpose::RgbImage img(width, height);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(byte(rng));
  return img;
}

std::vector<double> random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = g(rng);
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

}  // namespace fixtures
