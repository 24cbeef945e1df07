#include "nmpose/canonicalize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "json_util.hpp"
#include "nmpose/error.hpp"
#include "nmpose/kernels.hpp"

namespace nmpose {

void MergeConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, what); };
  if (!(tau_merge > 0.0)) fail("tau_merge must be positive");
  if (k_nn < 1) fail("k_nn must be at least 1");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (grid_az < 1 || grid_el < 1) fail("merge grid sizes must be positive");
  if (refinement_steps < 0) fail("refinement_steps must be non-negative");
}

double vertex_distance(const Vec3& v_m, const Vec3& v_n, const Rotation& r) { return (v_m - r * v_n).norm(); }

namespace {

// Interpolation against an already rotated vertex set.
std::vector<double> interpolate(const NeuralMesh& mesh, const std::vector<Vec3>& rotated, const Vec3& v_m,
                                int k_nn, double epsilon, std::vector<double>* weights_out) {
  const std::size_t k_count = rotated.size();
  const std::size_t k = std::min<std::size_t>(k_nn, k_count);
  std::vector<std::pair<double, int>> dist(k_count);
  for (std::size_t n = 0; n < k_count; ++n) dist[n] = {(v_m - rotated[n]).norm(), static_cast<int>(n)};
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

  std::vector<double> w(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = 1.0 / (dist[i].first + epsilon);
    total += w[i];
  }
  std::vector<double> out(mesh.dim, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    w[i] /= total;
    kernels::axpy(w[i], mesh.feature(dist[i].second), out.data(), out.size());
  }
  const double norm = std::sqrt(kernels::dot(out.data(), out.data(), out.size()));
  if (norm > 1e-12) {
    for (double& v : out) v /= norm;
  }
  if (weights_out) *weights_out = std::move(w);
  return out;
}

std::vector<Vec3> rotate_all(const std::vector<Vec3>& v, const Rotation& r) {
  std::vector<Vec3> out;
  out.reserve(v.size());
  for (const auto& p : v) out.push_back(r * p);
  return out;
}

void check_compatible(const NeuralMesh& a, const NeuralMesh& b) {
  if (a.size() != b.size() || a.dim != b.dim || a.geometry.level != b.geometry.level ||
      a.geometry.radius != b.geometry.radius) {
    throw Error(ErrorCode::kShape, "meshes do not share geometry parameters");
  }
}

}  // namespace

std::vector<double> interpolated_feature(const NeuralMesh& mesh, const Rotation& r, const Vec3& v_m, int k_nn,
                                         double epsilon, std::vector<double>* weights_out) {
  return interpolate(mesh, rotate_all(mesh.geometry.vertices, r), v_m, k_nn, epsilon, weights_out);
}

FeatureDistance feature_distance(const NeuralMesh& mesh_j, const NeuralMesh& mesh_i, const Rotation& r,
                                 const MergeConfig& config) {
  check_compatible(mesh_j, mesh_i);
  const auto rotated = rotate_all(mesh_i.geometry.vertices, r);
  FeatureDistance out;
  out.per_vertex.reserve(mesh_j.size());
  for (std::size_t m = 0; m < mesh_j.size(); ++m) {
    const auto f = interpolate(mesh_i, rotated, mesh_j.geometry.vertices[m], config.k_nn, config.epsilon, nullptr);
    const double* theta = mesh_j.feature(m);
    double sq = 0.0;
    for (int c = 0; c < mesh_j.dim; ++c) sq += (theta[c] - f[c]) * (theta[c] - f[c]);
    out.per_vertex.push_back(std::sqrt(sq));
    out.mean += out.per_vertex.back();
  }
  if (!out.per_vertex.empty()) out.mean /= static_cast<double>(out.per_vertex.size());
  return out;
}

RelativeRotation find_relative_rotation(const NeuralMesh& mesh_i, const NeuralMesh& mesh_j,
                                        const MergeConfig& config) {
  config.validate();
  check_compatible(mesh_i, mesh_j);
  RelativeRotation best;
  auto score = [&](const Rotation& r) {
    ++best.evaluations;
    return feature_distance(mesh_j, mesh_i, r, config).mean;
  };

  // Coarse pass: identity, then az x el cell centres. Strict improvement
  // keeps the lowest index on ties.
  best.r_star = Rotation::identity();
  best.distance = score(best.r_star);
  const double az_step = 360.0 / config.grid_az;
  const double el_step = 180.0 / config.grid_el;
  for (int a = 0; a < config.grid_az; ++a) {
    for (int e = 0; e < config.grid_el; ++e) {
      const ViewSpec spec{-180.0 + a * az_step, -90.0 + (e + 0.5) * el_step, 0.0};
      const Rotation r = lookat(spec);
      const double d = score(r);
      if (d < best.distance) {
        best.distance = d;
        best.r_star = r;
      }
    }
  }

  // Shrinking box of left perturbations around the incumbent.
  double h_az = az_step, h_el = el_step, h_theta = az_step;
  for (int step = 0; step < config.refinement_steps; ++step) {
    const Rotation centre = best.r_star;
    for (int i = -1; i <= 1; ++i) {
      for (int j = -1; j <= 1; ++j) {
        for (int k = -1; k <= 1; ++k) {
          if (i == 0 && j == 0 && k == 0) continue;
          const Rotation delta = rotation_z(deg2rad(k * h_theta)) * rotation_x(deg2rad(-j * h_el)) *
                                 rotation_y(deg2rad(i * h_az));
          const Rotation r = delta * centre;
          const double d = score(r);
          if (d < best.distance) {
            best.distance = d;
            best.r_star = r;
          }
        }
      }
    }
    h_az *= 0.5;
    h_el *= 0.5;
    h_theta *= 0.5;
  }
  return best;
}

bool merge_meshes(NeuralMesh& anchor, const NeuralMesh& other, const Rotation& r_star, const MergeConfig& config) {
  check_compatible(anchor, other);
  if (!(feature_distance(anchor, other, r_star, config).mean < config.tau_merge)) return false;
  const auto rotated = rotate_all(other.geometry.vertices, r_star);
  std::vector<double> merged(anchor.features.size());
  for (std::size_t m = 0; m < anchor.size(); ++m) {
    const auto f = interpolate(other, rotated, anchor.geometry.vertices[m], config.k_nn, config.epsilon, nullptr);
    const double* theta = anchor.feature(m);
    double* dst = merged.data() + m * anchor.dim;
    double sq = 0.0;
    for (int c = 0; c < anchor.dim; ++c) {
      dst[c] = 0.5 * (theta[c] + f[c]);
      sq += dst[c] * dst[c];
    }
    const double norm = std::sqrt(sq);
    if (norm > 1e-12) {
      for (int c = 0; c < anchor.dim; ++c) dst[c] /= norm;
    } else {
      std::copy(theta, theta + anchor.dim, dst);
    }
  }
  anchor.features = std::move(merged);
  return true;
}

ImageSet relabel_poses(const ImageSet& set, const Rotation& r) {
  ImageSet out = set;
  for (auto& view : out.views) view.label = view.label * r;
  return out;
}

NeuralMesh rotate_features(const NeuralMesh& mesh, const Rotation& r) {
  NeuralMesh out = mesh;
  const auto rotated = rotate_all(mesh.geometry.vertices, r);
  for (std::size_t m = 0; m < mesh.size(); ++m) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < rotated.size(); ++n) {
      const double d = (mesh.geometry.vertices[m] - rotated[n]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = n;
      }
    }
    std::copy(mesh.feature(best), mesh.feature(best) + mesh.dim, out.feature(m));
  }
  return out;
}

MergeResult merge_all(std::span<const NeuralMesh> meshes, std::span<const ImageSet> sets, const MergeConfig& config,
                      std::uint64_t seed) {
  config.validate();
  if (meshes.empty()) throw Error(ErrorCode::kInvalidArgument, "merge needs at least one mesh");
  if (!sets.empty() && sets.size() != meshes.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one image set per mesh is required");
  }
  std::mt19937_64 rng(seed);
  std::vector<int> order(meshes.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  MergeResult result;
  result.anchor = order.front();
  result.category = meshes[result.anchor];
  result.relabeled.assign(sets.begin(), sets.end());
  for (std::size_t i = 1; i < order.size(); ++i) {
    const int idx = order[i];
    const NeuralMesh& other = meshes[idx];
    const RelativeRotation rel = find_relative_rotation(other, result.category, config);
    MergeRecord rec;
    rec.instance_id = other.instance_id;
    rec.r_star = rel.r_star;
    rec.distance = rel.distance;
    rec.merged = merge_meshes(result.category, other, rel.r_star, config);
    // R* carries the other frame onto the anchor's, so labels pick up R*^T.
    if (!sets.empty()) result.relabeled[idx] = relabel_poses(sets[idx], rel.r_star.transpose());
    result.report.push_back(rec);
  }
  return result;
}

std::string merge_report_json(const std::vector<MergeRecord>& report) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : report) {
    arr.push_back({{"instance_id", r.instance_id},
                   {"r_star", detail::to_json(r.r_star)},
                   {"distance", r.distance},
                   {"merged", r.merged}});
  }
  return arr.dump(2);
}

}  // namespace nmpose
