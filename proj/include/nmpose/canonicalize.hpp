#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nmpose/neural_mesh.hpp"
#include "nmpose/so3.hpp"
#include "nmpose/viewgen.hpp"

namespace nmpose {

struct MergeConfig {
  double tau_merge = 0.8;
  int k_nn = 4;
  double epsilon = 1e-6;
  int grid_az = 24;
  int grid_el = 8;
  int refinement_steps = 8;

  // Throws Error(kConfig).
  void validate() const;
};

// |v_m - R v_n|
double vertex_distance(const Vec3& v_m, const Vec3& v_n, const Rotation& r);

// Inverse-distance weighted mean of the k_nn features of `mesh` whose rotated
// vertices R v_n lie closest to `v_m`, renormalized. Weights (D + eps)^-1
// are normalized to sum to one; `weights_out`, when given, receives them in
// order of increasing distance.
std::vector<double> interpolated_feature(const NeuralMesh& mesh, const Rotation& r, const Vec3& v_m, int k_nn,
                                         double epsilon, std::vector<double>* weights_out = nullptr);

struct FeatureDistance {
  double mean = 0.0;
  std::vector<double> per_vertex;
};

// Mean over vertices m of mesh_j of |theta_m - interpolated_feature(mesh_i, R, V_m)|.
FeatureDistance feature_distance(const NeuralMesh& mesh_j, const NeuralMesh& mesh_i, const Rotation& r,
                                 const MergeConfig& config);

struct RelativeRotation {
  Rotation r_star;
  double distance = 0.0;
  int evaluations = 0;
};

// Rotation R* that carries mesh_i's frame onto mesh_j's, by coarse search
// (identity first, then az x el cell centres) and shrinking-box refinement.
RelativeRotation find_relative_rotation(const NeuralMesh& mesh_i, const NeuralMesh& mesh_j,
                                        const MergeConfig& config);

// Averages `other` into `anchor` when their distance at R* is below
// tau_merge. Returns whether the merge happened.
bool merge_meshes(NeuralMesh& anchor, const NeuralMesh& other, const Rotation& r_star, const MergeConfig& config);

// Every label right-multiplied by r.
ImageSet relabel_poses(const ImageSet& set, const Rotation& r);

// Features moved to the vertex nearest each rotated vertex: the result's
// vertex m carries the feature of the vertex n with R v_n closest to v_m.
NeuralMesh rotate_features(const NeuralMesh& mesh, const Rotation& r);

struct MergeRecord {
  std::string instance_id;
  Rotation r_star;
  double distance = 0.0;
  bool merged = false;
};

struct MergeResult {
  NeuralMesh category;
  int anchor = 0;
  std::vector<ImageSet> relabeled;
  std::vector<MergeRecord> report;  // one per non-anchor mesh, in merge order
};

// Seeded anchor choice, then every other mesh aligned onto the anchor, merged
// when gated, and its image labels carried into the anchor frame.
// `sets` may be empty; otherwise it must parallel `meshes`.
MergeResult merge_all(std::span<const NeuralMesh> meshes, std::span<const ImageSet> sets,
                      const MergeConfig& config, std::uint64_t seed);

// JSON array of {instance_id, r_star, distance, merged}.
std::string merge_report_json(const std::vector<MergeRecord>& report);

}  // namespace nmpose
