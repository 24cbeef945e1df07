#pragma once

#include <string>
#include <vector>

#include "nmpose/feature_map.hpp"
#include "nmpose/neural_mesh.hpp"
#include "nmpose/raster.hpp"
#include "nmpose/so3.hpp"

namespace nmpose {

// 1 - mean cosine similarity between the mesh rendered at `pose` and F_test,
// over the rendered foreground. Throws Error(kInternal) on an empty render.
double reconstruction_loss(const FeatureMap& f_test, const NeuralMesh& mesh, const Rotation& pose,
                           const Camera& camera);

// Same loss, with the per-vertex similarities to every test pixel and the
// per-face feature Gram matrices precomputed, so one evaluation costs a
// rasterization plus O(foreground) work.
class PoseScorer {
 public:
  PoseScorer(const FeatureMap& f_test, const NeuralMesh& mesh, const Camera& camera);
  double loss(const Rotation& pose) const;

 private:
  const NeuralMesh& mesh_;
  Camera camera_;
  int width_ = 0;
  int height_ = 0;
  std::vector<double> similarity_;  // pixel-major, K per pixel
  std::vector<double> test_norm_;
  std::vector<std::array<double, 6>> gram_;  // per face: aa, bb, cc, ab, ac, bc
};

struct StartTrace {
  Rotation init;
  Rotation final_pose;
  double final_loss = 0.0;
  int iterations = 0;
  std::vector<double> losses;  // accepted iterates, non-increasing
};

struct PoseEstimate {
  Rotation pose;
  double residual = 0.0;
  std::vector<StartTrace> starts;
  int iterations = 0;  // summed over starts
};

struct EstimateOptions {
  int steps = 50;
  double step_size = 4.0;      // initial step length, degrees
  double fd_step = 0.5;        // central-difference angle, degrees
  double min_step = 1e-3;      // stop once the step shrinks below this, degrees
};

// Multi-start descent over left perturbations Rz(theta) Rx(-el) Ry(az) P.
// Ties between starts go to the lowest index. Throws Error(kInvalidArgument)
// on an empty init list.
PoseEstimate estimate_pose(const FeatureMap& f_test, const NeuralMesh& mesh, const Camera& camera,
                           const std::vector<Rotation>& inits, const EstimateOptions& options = {});

// Default starting poses.
std::vector<Rotation> default_inits();

// P -> P C with C = anchor_pred^T anchor_gt.
std::vector<Rotation> align_predictions(const std::vector<Rotation>& preds, const Rotation& anchor_pred,
                                        const Rotation& anchor_gt);

struct MetricsReport {
  double median = 0.0;  // degrees, lower median
  double acc30 = 0.0;
  double acc10 = 0.0;
  std::vector<double> errors;  // degrees
};

// Throws Error(kInvalidArgument) on empty or unequal lists.
MetricsReport compute_metrics(const std::vector<Rotation>& preds, const std::vector<Rotation>& gts);
MetricsReport metrics_from_errors(const std::vector<double>& errors_deg);

struct ImageResult {
  std::string id;
  Rotation pred;
  Rotation gt;
  double error_deg = 0.0;
};

// {"config_digest", "per_image": [{id, pred, gt, error_deg}], "median", "acc30", "acc10"}
std::string evaluation_report_json(const std::string& config_digest, const std::vector<ImageResult>& images,
                                   const MetricsReport& metrics);
std::string evaluation_report_csv(const std::vector<ImageResult>& images);

}  // namespace nmpose
