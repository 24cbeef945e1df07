#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "nmpose/feature_map.hpp"
#include "nmpose/so3.hpp"

namespace nmpose {

using Vec2 = Eigen::Vector2d;

// Pinhole camera on the -Z axis at `distance` from the object centre, looking
// toward +Z with +Y up. Image pixel (u, v) has its centre at coordinates
// (u, v); the principal point is (image_w / 2, image_h / 2). Feature maps are
// the image grid subsampled by `stride`.
struct Camera {
  double distance = 4.0;
  double focal = 368.0;
  int image_w = 256;
  int image_h = 256;
  int stride = 8;

  int feature_w() const { return image_w / stride; }
  int feature_h() const { return image_h / stride; }

  // Throws Error(kInvalidArgument).
  void validate() const;
  void validate_for_radius(double radius) const;

  bool operator==(const Camera&) const = default;
};

inline constexpr double kBackgroundDepth = std::numeric_limits<double>::infinity();

// Camera-to-surface distance per feature-map pixel; +inf marks background.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;

  double at(int x, int y) const { return depth[static_cast<std::size_t>(y) * width + x]; }
};

struct VertexScreenData {
  std::vector<Vec2> pixel;         // feature-map coordinates
  std::vector<double> distance;    // vertex-to-camera distance
  std::vector<std::uint8_t> visible;  // empty until compute_visibility
};

// Perspective-correct barycentric weights of the frontmost face at one pixel.
struct Fragment {
  int face = -1;
  double depth = kBackgroundDepth;
  std::array<double, 3> weights{};
};

struct FragmentBuffer {
  int width = 0;
  int height = 0;
  std::vector<Fragment> fragments;

  const Fragment& at(int x, int y) const {
    return fragments[static_cast<std::size_t>(y) * width + x];
  }
};

// Z-buffer rasterization of `vertices` (object frame) posed by `pose` onto
// the image grid subsampled by `stride` (1 = full image resolution).
FragmentBuffer rasterize(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> faces,
                         const Rotation& pose, const Camera& camera, int stride);

VertexScreenData project_vertices(const PolyMesh& mesh, const Rotation& pose, const Camera& camera);

DepthMap render_depth(const PolyMesh& mesh, const Rotation& pose, const Camera& camera);

// o_k = 1 iff |D(round(p_k)) - d_k| <= tau; vertices projecting outside the
// map or onto background get 0.
VertexScreenData compute_visibility(VertexScreenData screen, const DepthMap& depth, double tau);

struct RenderedFeatures {
  FeatureMap map;
  std::vector<std::uint8_t> foreground;  // width * height, row-major
};

// Barycentric interpolation of per-vertex features (K x dim, row-major) over
// the frontmost face at each feature-map pixel; background pixels are zero.
RenderedFeatures render_feature_map(const PolyMesh& geometry, std::span<const double> features,
                                    int dim, const Rotation& pose, const Camera& camera);

void save_depth_map(const std::filesystem::path& path, const DepthMap& depth);
DepthMap load_depth_map(const std::filesystem::path& path);

}  // namespace nmpose
