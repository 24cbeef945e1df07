#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nmpose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// A 3x3 special-orthogonal matrix. Construction from arbitrary matrices is
// validated (orthogonality and det = +1 within kRotationTolerance); products
// of valid rotations are trusted.
class Rotation {
 public:
  static constexpr double kRotationTolerance = 1e-9;

  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }
  // Throws Error(kInvalidRotation).
  static Rotation from_matrix(const Mat3& m, double tolerance = kRotationTolerance);
  static Rotation from_row_major(std::span<const double, 9> values);
  // Right-handed rotation by `angle` radians about `axis` (need not be unit).
  static Rotation about_axis(const Vec3& axis, double angle);

  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }
  std::array<double, 9> row_major() const;

  Rotation transpose() const { return Rotation(m_.transpose(), Trusted{}); }
  Rotation operator*(const Rotation& rhs) const { return Rotation(m_ * rhs.m_, Trusted{}); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  // Max of the orthogonality residual and |det - 1|.
  static double defect(const Mat3& m);

 private:
  struct Trusted {};
  Rotation(const Mat3& m, Trusted) : m_(m) {}

  Mat3 m_;
};

Rotation rotation_x(double radians);
Rotation rotation_y(double radians);
Rotation rotation_z(double radians);

double deg2rad(double degrees);
double rad2deg(double radians);

// Camera view around an object at the origin, in degrees. az rotates about
// the world up axis (+Y), el tilts toward the pole, theta rolls about the
// viewing axis.
struct ViewSpec {
  double az = 0.0;
  double el = 0.0;
  double theta = 0.0;

  bool operator==(const ViewSpec&) const = default;
};

// Object-to-camera rotation for a camera placed at (az, el) looking at the
// origin with +Y up, then rolled by theta. (0, 0, 0) puts the camera on -Z
// looking toward +Z and yields the identity. Throws Error(kDegenerateView)
// at the poles and Error(kInvalidArgument) for out-of-range angles.
Rotation lookat(const ViewSpec& view);

// P_m = P_canonical * delta.
Rotation compose_pose(const Rotation& canonical, const Rotation& delta);

// Rotation angle of a^T b in [0, pi]. Trace based: the cosine comes from
// (tr - 1) / 2 and the sine from the skew part, combined with atan2 so the
// result stays accurate near 0 and pi.
double geodesic_distance(const Rotation& a, const Rotation& b);

struct PolyMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  int level = 0;
  double radius = 1.0;
};

constexpr int kMaxPolyhedronLevel = 4;

// Icosahedron subdivided `level` times and re-projected onto the sphere of
// the given radius; faces wound counter-clockwise seen from outside.
// 10 * 4^level + 2 vertices. Throws Error(kResourceLimit) above level 4.
PolyMesh build_geodesic_polyhedron(int level, double radius);

// Vertex count a polyhedron of this level has.
int polyhedron_vertex_count(int level);

// Cartesian grid of lookat rotations, az-major. az spans [-180, 180) evenly,
// el spans [-60, 60] and theta [-30, 30] inclusive; a single sample sits at
// the range start.
std::vector<Rotation> so3_grid(int n_az, int n_el, int n_theta);

// JSON form {"level", "radius", "vertices": [[x,y,z]...], "faces": [[i,j,k]...]}
// with reals written to 17 significant digits.
std::string polymesh_to_json(const PolyMesh& mesh);
PolyMesh polymesh_from_json(const std::string& text);

}  // namespace nmpose
