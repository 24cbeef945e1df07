#include "nmpose/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nmpose/error.hpp"

namespace nmpose {

void Camera::validate() const {
  if (!(distance > 0.0) || !(focal > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "camera distance and focal must be positive");
  }
  if (image_w <= 0 || image_h <= 0 || stride <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "camera image size and stride must be positive");
  }
  if (image_w % stride != 0 || image_h % stride != 0) {
    throw Error(ErrorCode::kInvalidArgument, "image size must be divisible by the feature stride");
  }
}

void Camera::validate_for_radius(double radius) const {
  validate();
  if (!(distance > radius)) {
    throw Error(ErrorCode::kInvalidArgument, "camera distance must exceed the object radius");
  }
}

namespace {

struct Projected {
  Vec3 cam;  // camera-space position
  Vec2 screen;
};

Projected project(const Vec3& v, const Rotation& pose, const Camera& camera, int stride) {
  Projected p;
  p.cam = pose * v;
  p.cam.z() += camera.distance;
  if (!(p.cam.z() > 1e-9)) throw Error(ErrorCode::kInternal, "vertex behind the camera");
  const double inv_z = 1.0 / p.cam.z();
  p.screen.x() = (0.5 * camera.image_w + camera.focal * p.cam.x() * inv_z) / stride;
  p.screen.y() = (0.5 * camera.image_h - camera.focal * p.cam.y() * inv_z) / stride;
  return p;
}

}  // namespace

FragmentBuffer rasterize(std::span<const Vec3> vertices, std::span<const std::array<int, 3>> faces,
                         const Rotation& pose, const Camera& camera, int stride) {
  FragmentBuffer buf;
  buf.width = camera.image_w / stride;
  buf.height = camera.image_h / stride;
  buf.fragments.assign(static_cast<std::size_t>(buf.width) * buf.height, Fragment{});

  std::vector<Projected> proj;
  proj.reserve(vertices.size());
  for (const auto& v : vertices) proj.push_back(project(v, pose, camera, stride));

  constexpr double kInsideEps = -1e-12;
  for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
    const auto& [ia, ib, ic] = faces[f];
    const Vec2& a = proj[ia].screen;
    const Vec2& b = proj[ib].screen;
    const Vec2& c = proj[ic].screen;
    const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (std::abs(area) < 1e-14) continue;
    const double inv_area = 1.0 / area;

    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
    const int x1 = std::min(buf.width - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
    const int y1 = std::min(buf.height - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
    if (x0 > x1 || y0 > y1) continue;

    const double inv_za = 1.0 / proj[ia].cam.z();
    const double inv_zb = 1.0 / proj[ib].cam.z();
    const double inv_zc = 1.0 / proj[ic].cam.z();

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x;
        const double py = y;
        // Screen-space barycentrics from edge functions.
        const double la = ((b.x() - px) * (c.y() - py) - (b.y() - py) * (c.x() - px)) * inv_area;
        const double lb = ((c.x() - px) * (a.y() - py) - (c.y() - py) * (a.x() - px)) * inv_area;
        const double lc = 1.0 - la - lb;
        if (la < kInsideEps || lb < kInsideEps || lc < kInsideEps) continue;
        // Perspective correction.
        const double wa = la * inv_za;
        const double wb = lb * inv_zb;
        const double wc = lc * inv_zc;
        const double norm = 1.0 / (wa + wb + wc);
        const std::array<double, 3> w{wa * norm, wb * norm, wc * norm};
        const Vec3 point = w[0] * proj[ia].cam + w[1] * proj[ib].cam + w[2] * proj[ic].cam;
        const double depth = point.norm();
        Fragment& frag = buf.fragments[static_cast<std::size_t>(y) * buf.width + x];
        if (depth < frag.depth) {
          frag.face = f;
          frag.depth = depth;
          frag.weights = w;
        }
      }
    }
  }
  return buf;
}

VertexScreenData project_vertices(const PolyMesh& mesh, const Rotation& pose, const Camera& camera) {
  VertexScreenData out;
  out.pixel.reserve(mesh.vertices.size());
  out.distance.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) {
    const Projected p = project(v, pose, camera, camera.stride);
    out.pixel.push_back(p.screen);
    out.distance.push_back(p.cam.norm());
  }
  return out;
}

DepthMap render_depth(const PolyMesh& mesh, const Rotation& pose, const Camera& camera) {
  const FragmentBuffer buf = rasterize(mesh.vertices, mesh.faces, pose, camera, camera.stride);
  DepthMap depth{buf.width, buf.height, {}};
  depth.depth.reserve(buf.fragments.size());
  for (const auto& frag : buf.fragments) depth.depth.push_back(frag.depth);
  return depth;
}

VertexScreenData compute_visibility(VertexScreenData screen, const DepthMap& depth, double tau) {
  screen.visible.assign(screen.pixel.size(), 0);
  for (std::size_t k = 0; k < screen.pixel.size(); ++k) {
    const int x = static_cast<int>(std::floor(screen.pixel[k].x() + 0.5));
    const int y = static_cast<int>(std::floor(screen.pixel[k].y() + 0.5));
    if (x < 0 || y < 0 || x >= depth.width || y >= depth.height) continue;
    const double d = depth.at(x, y);
    if (!std::isfinite(d)) continue;
    screen.visible[k] = std::abs(d - screen.distance[k]) <= tau ? 1 : 0;
  }
  return screen;
}

RenderedFeatures render_feature_map(const PolyMesh& geometry, std::span<const double> features,
                                    int dim, const Rotation& pose, const Camera& camera) {
  if (features.size() != geometry.vertices.size() * static_cast<std::size_t>(dim)) {
    throw Error(ErrorCode::kShape, "feature bank does not match the geometry");
  }
  const FragmentBuffer buf = rasterize(geometry.vertices, geometry.faces, pose, camera, camera.stride);
  RenderedFeatures out{FeatureMap(dim, buf.height, buf.width),
                       std::vector<std::uint8_t>(buf.fragments.size(), 0)};
  for (int y = 0; y < buf.height; ++y) {
    for (int x = 0; x < buf.width; ++x) {
      const Fragment& frag = buf.at(x, y);
      if (frag.face < 0) continue;
      out.foreground[static_cast<std::size_t>(y) * buf.width + x] = 1;
      double* dst = out.map.pixel(x, y);
      const auto& face = geometry.faces[frag.face];
      for (int i = 0; i < 3; ++i) {
        const double* src = features.data() + static_cast<std::size_t>(face[i]) * dim;
        const double w = frag.weights[i];
        for (int c = 0; c < dim; ++c) dst[c] += w * src[c];
      }
    }
  }
  return out;
}

void save_depth_map(const std::filesystem::path& path, const DepthMap& depth) {
  Blob blob{1, depth.height, depth.width, {}};
  blob.values.reserve(depth.depth.size());
  for (double d : depth.depth) blob.values.push_back(static_cast<float>(d));
  write_blob(path, blob);
}

DepthMap load_depth_map(const std::filesystem::path& path) {
  const Blob blob = read_blob(path);
  if (blob.channels != 1) throw Error(ErrorCode::kShape, "depth blob must have one channel");
  DepthMap depth{blob.width, blob.height, {}};
  depth.depth.assign(blob.values.begin(), blob.values.end());
  return depth;
}

}  // namespace nmpose
