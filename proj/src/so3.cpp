#include "nmpose/so3.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>
#include <utility>

#include <Eigen/Geometry>
#include <json.hpp>

#include "nmpose/error.hpp"

namespace nmpose {

double Rotation::defect(const Mat3& m) {
  const double ortho = (m.transpose() * m - Mat3::Identity()).norm();
  return std::max(ortho, std::abs(m.determinant() - 1.0));
}

Rotation Rotation::from_matrix(const Mat3& m, double tolerance) {
  if (!m.allFinite()) throw Error(ErrorCode::kInvalidRotation, "matrix has non-finite entries");
  const double ortho = (m.transpose() * m - Mat3::Identity()).norm();
  if (ortho > tolerance) {
    throw Error(ErrorCode::kInvalidRotation,
                "matrix is not orthogonal (residual " + std::to_string(ortho) + ")");
  }
  const double det = m.determinant();
  if (std::abs(det - 1.0) > tolerance) {
    throw Error(ErrorCode::kInvalidRotation, "determinant is " + std::to_string(det));
  }
  return Rotation(m, Trusted{});
}

Rotation Rotation::from_row_major(std::span<const double, 9> v) {
  Mat3 m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return from_matrix(m);
}

Rotation Rotation::about_axis(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw Error(ErrorCode::kInvalidArgument, "rotation axis has zero length");
  return Rotation(Eigen::AngleAxisd(angle, axis / n).toRotationMatrix(), Trusted{});
}

std::array<double, 9> Rotation::row_major() const {
  return {m_(0, 0), m_(0, 1), m_(0, 2), m_(1, 0), m_(1, 1),
          m_(1, 2), m_(2, 0), m_(2, 1), m_(2, 2)};
}

Rotation rotation_x(double r) { return Rotation::about_axis(Vec3::UnitX(), r); }
Rotation rotation_y(double r) { return Rotation::about_axis(Vec3::UnitY(), r); }
Rotation rotation_z(double r) { return Rotation::about_axis(Vec3::UnitZ(), r); }

double deg2rad(double degrees) { return degrees * std::numbers::pi / 180.0; }
double rad2deg(double radians) { return radians * 180.0 / std::numbers::pi; }

Rotation lookat(const ViewSpec& view) {
  if (!(view.az >= -180.0 && view.az <= 180.0) || !(view.el >= -90.0 && view.el <= 90.0) ||
      !(view.theta >= -180.0 && view.theta <= 180.0)) {
    throw Error(ErrorCode::kInvalidArgument, "view angles out of range");
  }
  if (std::abs(view.el) >= 90.0) {
    throw Error(ErrorCode::kDegenerateView, "elevation of +-90 makes the up vector parallel to the view");
  }
  const double az = deg2rad(view.az);
  const double el = deg2rad(view.el);
  // Camera centre on the unit view sphere; the forward axis points at the origin.
  const Vec3 centre(std::sin(az) * std::cos(el), std::sin(el), -std::cos(az) * std::cos(el));
  const Vec3 forward = -centre;
  const Vec3 up_world = Vec3::UnitY();
  const Vec3 up = (up_world - up_world.dot(forward) * forward).normalized();
  const Vec3 right = up.cross(forward);

  Mat3 m;
  m.row(0) = right.transpose();
  m.row(1) = up.transpose();
  m.row(2) = forward.transpose();
  const Mat3 rolled = rotation_z(deg2rad(view.theta)).matrix() * m;
  return Rotation::from_matrix(rolled);
}

Rotation compose_pose(const Rotation& canonical, const Rotation& delta) { return canonical * delta; }

double geodesic_distance(const Rotation& a, const Rotation& b) {
  const Mat3 rel = a.matrix().transpose() * b.matrix();
  const double cos_part = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  const double sin_part = 0.5 * skew.norm();
  return std::atan2(sin_part, cos_part);
}

int polyhedron_vertex_count(int level) { return 10 * (1 << (2 * level)) + 2; }

PolyMesh build_geodesic_polyhedron(int level, double radius) {
  if (level < 0) throw Error(ErrorCode::kInvalidArgument, "polyhedron level must be >= 0");
  if (level > kMaxPolyhedronLevel) {
    throw Error(ErrorCode::kResourceLimit,
                "polyhedron level " + std::to_string(level) + " exceeds the cap of " +
                    std::to_string(kMaxPolyhedronLevel));
  }
  if (!(radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "polyhedron radius must be > 0");

  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                         {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                         {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& [a, b, c] : f) {
      const int ab = midpoint(a, b);
      const int bc = midpoint(b, c);
      const int ca = midpoint(c, a);
      next.push_back({a, ab, ca});
      next.push_back({b, bc, ab});
      next.push_back({c, ca, bc});
      next.push_back({ab, bc, ca});
    }
    f = std::move(next);
  }

  // Orient every face outward.
  for (auto& face : f) {
    const Vec3 n = (v[face[1]] - v[face[0]]).cross(v[face[2]] - v[face[0]]);
    if (n.dot(v[face[0]] + v[face[1]] + v[face[2]]) < 0.0) std::swap(face[1], face[2]);
  }

  PolyMesh mesh;
  mesh.level = level;
  mesh.radius = radius;
  mesh.vertices.reserve(v.size());
  for (const auto& p : v) mesh.vertices.push_back(p * radius);
  mesh.faces = std::move(f);
  return mesh;
}

std::vector<Rotation> so3_grid(int n_az, int n_el, int n_theta) {
  if (n_az < 1 || n_el < 1 || n_theta < 1) {
    throw Error(ErrorCode::kInvalidArgument, "so3_grid counts must be >= 1");
  }
  auto inclusive = [](int n, int i, double lo, double hi) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  };
  std::vector<Rotation> grid;
  grid.reserve(static_cast<std::size_t>(n_az) * n_el * n_theta);
  for (int a = 0; a < n_az; ++a) {
    const double az = -180.0 + 360.0 * static_cast<double>(a) / n_az;
    for (int e = 0; e < n_el; ++e) {
      const double el = inclusive(n_el, e, -60.0, 60.0);
      for (int r = 0; r < n_theta; ++r) {
        grid.push_back(lookat({az, el, inclusive(n_theta, r, -30.0, 30.0)}));
      }
    }
  }
  return grid;
}

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string polymesh_to_json(const PolyMesh& mesh) {
  std::ostringstream out;
  out << "{\"level\":" << mesh.level << ",\"radius\":" << fmt17(mesh.radius) << ",\"vertices\":[";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& p = mesh.vertices[i];
    out << (i ? "," : "") << '[' << fmt17(p.x()) << ',' << fmt17(p.y()) << ',' << fmt17(p.z()) << ']';
  }
  out << "],\"faces\":[";
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    out << (i ? "," : "") << '[' << f[0] << ',' << f[1] << ',' << f[2] << ']';
  }
  out << "]}";
  return out.str();
}

PolyMesh polymesh_from_json(const std::string& text) {
  PolyMesh mesh;
  try {
    const auto j = nlohmann::json::parse(text);
    mesh.level = j.value("level", 0);
    mesh.radius = j.value("radius", 1.0);
    for (const auto& p : j.at("vertices")) {
      mesh.vertices.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    }
    const int n = static_cast<int>(mesh.vertices.size());
    for (const auto& f : j.at("faces")) {
      std::array<int, 3> face{f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()};
      for (int idx : face) {
        if (idx < 0 || idx >= n) throw Error(ErrorCode::kInvalidArgument, "face index out of range");
      }
      mesh.faces.push_back(face);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed polymesh json: ") + e.what());
  }
  return mesh;
}

}  // namespace nmpose
