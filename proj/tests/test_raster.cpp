#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "nmpose/error.hpp"
#include "nmpose/raster.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace nmpose;

namespace {

PolyMesh single_point() {
  PolyMesh m;
  m.vertices = {Vec3::Zero(), Vec3(0, 1, 0)};
  return m;
}

}  // namespace

TEST(Project, OriginLandsOnPrincipalPoint) {
  const Camera cam = fixtures::gate_camera();
  const auto s = project_vertices(single_point(), Rotation::identity(), cam);
  EXPECT_DOUBLE_EQ(s.pixel[0].x(), cam.image_w / 2.0 / cam.stride);
  EXPECT_DOUBLE_EQ(s.pixel[0].y(), cam.image_h / 2.0 / cam.stride);
  EXPECT_DOUBLE_EQ(s.distance[0], cam.distance);
}

TEST(Project, UpVertexMovesUpTheImage) {
  const Camera cam = fixtures::gate_camera();
  const auto s = project_vertices(single_point(), Rotation::identity(), cam);
  const double r = 1.0;
  EXPECT_NEAR(s.pixel[1].x(), cam.image_w / 2.0 / cam.stride, 1e-12);
  EXPECT_NEAR(s.pixel[1].y(), cam.image_h / 2.0 / cam.stride - cam.focal * r / (cam.distance * cam.stride), 1e-12);
}

TEST(Project, DistancesBoundedBySphere) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(2, 1.0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto s = project_vertices(mesh, oracle::random_rotation(rng), cam);
    for (double d : s.distance) {
      EXPECT_GE(d, cam.distance - 1.0 - 1e-12);
      EXPECT_LE(d, cam.distance + 1.0 + 1e-12);
    }
  }
}

TEST(Camera, Validation) {
  Camera cam = fixtures::gate_camera();
  EXPECT_NO_THROW(cam.validate());
  cam.image_w = 250;
  EXPECT_THROW(cam.validate(), Error);
  cam = fixtures::gate_camera();
  EXPECT_THROW(cam.validate_for_radius(cam.distance), Error);
}

TEST(RenderDepth, EmptyMeshIsBackground) {
  const auto d = render_depth(single_point(), Rotation::identity(), fixtures::gate_camera());
  for (double v : d.depth) EXPECT_EQ(v, kBackgroundDepth);
}

TEST(RenderDepth, MatchesRayCastingOracle) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(2, 1.0);
  std::mt19937_64 rng(2);
  for (const Rotation& pose : {Rotation::identity(), oracle::random_rotation(rng)}) {
    const auto depth = render_depth(mesh, pose, cam);
    int covered = 0;
    for (int y = 0; y < depth.height; ++y) {
      for (int x = 0; x < depth.width; ++x) {
        const double expected = oracle::ray_cast_depth(mesh, pose, cam, x, y);
        ASSERT_EQ(std::isfinite(depth.at(x, y)), std::isfinite(expected)) << x << "," << y;
        if (std::isfinite(expected)) {
          ++covered;
          ASSERT_NEAR(depth.at(x, y), expected, 1e-6) << x << "," << y;
        }
      }
    }
    EXPECT_GT(covered, 100);
  }
}

TEST(RenderDepth, FiniteValuesInsideShellAndFrontNearDminusR) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(2, 1.0);
  const auto depth = render_depth(mesh, Rotation::identity(), cam);
  double front = kBackgroundDepth;
  for (double v : depth.depth) {
    if (!std::isfinite(v)) continue;
    EXPECT_GE(v, cam.distance - 1.0 - 1e-12);
    EXPECT_LT(v, cam.distance + 1.0);
    front = std::min(front, v);
  }
  // Faceting of a level-2 sphere leaves the flat faces about 1.5% inside.
  EXPECT_NEAR(front, cam.distance - 1.0, 0.02);
}

TEST(RenderDepth, RotationConsistentAndDeterministic) {
  const Camera cam = fixtures::gate_camera();
  auto mesh = build_geodesic_polyhedron(2, 1.0);
  std::mt19937_64 rng(3);
  const Rotation r = oracle::random_rotation(rng);
  const auto posed = render_depth(mesh, r, cam);
  EXPECT_EQ(posed.depth, render_depth(mesh, r, cam).depth);
  for (auto& v : mesh.vertices) v = r * v;
  EXPECT_EQ(render_depth(mesh, Rotation::identity(), cam).depth, posed.depth);
}

TEST(RenderDepth, BlobRoundTrip) {
  fixtures::TempDir dir("depth");
  const auto depth = render_depth(build_geodesic_polyhedron(1, 1.0), Rotation::identity(), fixtures::gate_camera());
  save_depth_map(dir.path() / "d.nmfm", depth);
  const auto back = load_depth_map(dir.path() / "d.nmfm");
  ASSERT_EQ(back.width, depth.width);
  ASSERT_EQ(back.height, depth.height);
  for (std::size_t i = 0; i < depth.depth.size(); ++i) {
    if (std::isfinite(depth.depth[i])) {
      EXPECT_NEAR(back.depth[i], depth.depth[i], 1e-6 * depth.depth[i]);
    } else {
      EXPECT_FALSE(std::isfinite(back.depth[i]));
    }
  }
}

TEST(Visibility, FrontmostVertexAlwaysVisible) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(1, 1.0);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const Rotation pose = oracle::random_rotation(rng);
    const auto s = compute_visibility(project_vertices(mesh, pose, cam), render_depth(mesh, pose, cam), 0.05);
    const auto k = std::min_element(s.distance.begin(), s.distance.end()) - s.distance.begin();
    EXPECT_EQ(s.visible[k], 1) << "pose " << i;
  }
}

TEST(Visibility, AntipodalPairOnAxis) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(1, 1.0);
  // Turn vertex 0 toward the camera; its antipode ends up behind the sphere.
  const Vec3 v = mesh.vertices[0].normalized();
  const Vec3 axis = v.cross(Vec3(0, 0, -1));
  const Rotation pose = Rotation::about_axis(axis, std::acos(v.dot(Vec3(0, 0, -1))));
  int anti = -1;
  for (int k = 0; k < static_cast<int>(mesh.vertices.size()); ++k) {
    if ((mesh.vertices[k] + mesh.vertices[0]).norm() < 1e-9) anti = k;
  }
  ASSERT_GE(anti, 0);
  const auto s = compute_visibility(project_vertices(mesh, pose, cam), render_depth(mesh, pose, cam), 0.05);
  EXPECT_EQ(s.visible[0], 1);
  EXPECT_EQ(s.visible[anti], 0);
}

TEST(Visibility, VisibleImpliesInBounds) {
  Camera cam = fixtures::gate_camera();
  cam.focal = 1500;  // sphere overflows the frame
  const auto mesh = build_geodesic_polyhedron(2, 1.0);
  const auto s = compute_visibility(project_vertices(mesh, Rotation::identity(), cam),
                                    render_depth(mesh, Rotation::identity(), cam), 0.05);
  int visible = 0;
  for (std::size_t k = 0; k < s.visible.size(); ++k) {
    if (!s.visible[k]) continue;
    ++visible;
    EXPECT_GE(s.pixel[k].x(), -0.5);
    EXPECT_LT(s.pixel[k].x(), cam.feature_w() - 0.5);
    EXPECT_GE(s.pixel[k].y(), -0.5);
    EXPECT_LT(s.pixel[k].y(), cam.feature_h() - 0.5);
  }
  EXPECT_GT(visible, 0);
}

// Two independent visibility oracles agree: on a convex polyhedron a vertex
// is visible exactly when one of its faces points at the camera.
TEST(Visibility, RayCastMatchesFrontFacingFaces) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(2, 1.0);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    const Rotation pose = oracle::random_rotation(rng);
    const auto vis = oracle::ray_cast_visibility(mesh, pose, cam);
    std::vector<std::uint8_t> front(mesh.vertices.size(), 0);
    for (const auto& f : mesh.faces) {
      Vec3 p[3];
      for (int j = 0; j < 3; ++j) p[j] = pose * mesh.vertices[f[j]] + Vec3(0, 0, cam.distance);
      const Vec3 n = (p[1] - p[0]).cross(p[2] - p[0]);
      if (n.dot(p[0]) < 0) {
        for (int j : f) front[j] = 1;
      }
    }
    EXPECT_EQ(vis, front) << "pose " << i;
  }
}

// On a fine mesh the visible set approaches the spherical cap seen from
// distance D, which covers (1 - r/D) / 2 of the surface.
TEST(Visibility, RayCastApproachesAnalyticCap) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(4, 1.0);
  std::mt19937_64 rng(5);
  const double expected = mesh.vertices.size() * (1.0 - 1.0 / cam.distance) / 2.0;
  const auto vis = oracle::ray_cast_visibility(mesh, oracle::random_rotation(rng), cam);
  const double count = std::count(vis.begin(), vis.end(), 1);
  EXPECT_NEAR(count, expected, 0.05 * expected);
}

// With the nearest-pixel depth lookup the depth test is conservative: it
// never marks an occluded vertex visible, and every vertex it drops lies
// near the silhouette where a coarse pixel straddles the contour.
TEST(Visibility, DepthTestAgainstRayCast) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(1, 1.0);
  const double tau = 0.05;
  std::mt19937_64 rng(6);
  int agree = 0, total = 0;
  for (int i = 0; i < 20; ++i) {
    const Rotation pose = oracle::random_rotation(rng);
    const auto s = compute_visibility(project_vertices(mesh, pose, cam), render_depth(mesh, pose, cam), tau);
    const auto truth = oracle::ray_cast_visibility(mesh, pose, cam);
    for (std::size_t k = 0; k < truth.size(); ++k) {
      ++total;
      if (s.visible[k] == truth[k]) {
        ++agree;
        continue;
      }
      EXPECT_EQ(truth[k], 1) << "occluded vertex passed the depth test";
    }
  }
  EXPECT_GT(agree, total / 2);
}

TEST(RenderFeatures, ConstantFeaturesStayConstant) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(2, 1.0);
  const int dim = 4;
  std::vector<double> features(mesh.vertices.size() * dim);
  for (std::size_t i = 0; i < features.size(); ++i) features[i] = 0.25 * static_cast<double>(i % dim) - 0.3;
  std::mt19937_64 rng(7);
  const auto r = render_feature_map(mesh, features, dim, oracle::random_rotation(rng), cam);
  int fg = 0;
  for (int y = 0; y < r.map.height; ++y) {
    for (int x = 0; x < r.map.width; ++x) {
      const bool is_fg = r.foreground[y * r.map.width + x];
      fg += is_fg;
      for (int c = 0; c < dim; ++c) EXPECT_NEAR(r.map.pixel(x, y)[c], is_fg ? features[c] : 0.0, 1e-12);
    }
  }
  EXPECT_GT(fg, 0);
}

TEST(RenderFeatures, ForegroundMatchesDepthMask) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(2, 1.0);
  std::mt19937_64 rng(8);
  const Rotation pose = oracle::random_rotation(rng);
  const std::vector<double> features(mesh.vertices.size() * 3, 1.0);
  const auto r = render_feature_map(mesh, features, 3, pose, cam);
  const auto d = render_depth(mesh, pose, cam);
  for (std::size_t i = 0; i < d.depth.size(); ++i) EXPECT_EQ(r.foreground[i] == 1, std::isfinite(d.depth[i]));
}

TEST(RenderFeatures, SamplingAtVisibleVertexRecoversItsFeature) {
  const Camera cam = fixtures::gate_camera();
  const auto mesh = build_geodesic_polyhedron(2, 1.0);
  std::mt19937_64 rng(9);
  const int dim = 8;
  // Smooth field over the sphere so neighbouring vertices carry nearby values.
  std::vector<double> features;
  for (const auto& v : mesh.vertices) {
    for (int c = 0; c < dim; ++c) features.push_back(std::sin(1.3 * v.x() + c) + std::cos(0.7 * v.y() - c) + v.z());
  }
  const Rotation pose = oracle::random_rotation(rng);
  const auto r = render_feature_map(mesh, features, dim, pose, cam);
  const auto s = compute_visibility(project_vertices(mesh, pose, cam), render_depth(mesh, pose, cam), 0.05);
  int checked = 0;
  for (std::size_t k = 0; k < mesh.vertices.size(); ++k) {
    if (!s.visible[k]) continue;
    const int x = static_cast<int>(std::lround(s.pixel[k].x()));
    const int y = static_cast<int>(std::lround(s.pixel[k].y()));
    // Bound by the largest feature gap between k and any vertex of the
    // covering face.
    const auto frag = rasterize(mesh.vertices, mesh.faces, pose, cam, cam.stride).at(x, y);
    ASSERT_GE(frag.face, 0);
    double bound = 0;
    for (int corner : mesh.faces[frag.face]) {
      for (int c = 0; c < dim; ++c) {
        bound = std::max(bound, std::abs(features[corner * dim + c] - features[k * dim + c]));
      }
    }
    for (int c = 0; c < dim; ++c) {
      EXPECT_LE(std::abs(r.map.pixel(x, y)[c] - features[k * dim + c]), bound + 1e-12);
    }
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(RenderFeatures, ShapeMismatchThrows) {
  const auto mesh = build_geodesic_polyhedron(1, 1.0);
  std::vector<double> features(5);
  try {
    render_feature_map(mesh, features, 2, Rotation::identity(), fixtures::gate_camera());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}
