#include "nmpose/infer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "json_util.hpp"
#include "nmpose/error.hpp"
#include "nmpose/kernels.hpp"

namespace nmpose {

double reconstruction_loss(const FeatureMap& f_test, const NeuralMesh& mesh, const Rotation& pose,
                           const Camera& camera) {
  const RenderedFeatures syn = render_feature_map(mesh.geometry, mesh.features, mesh.dim, pose, camera);
  if (syn.map.width != f_test.width || syn.map.height != f_test.height || syn.map.channels != f_test.channels) {
    throw Error(ErrorCode::kShape, "test feature map does not match the camera");
  }
  double total = 0.0;
  int count = 0;
  for (int y = 0; y < syn.map.height; ++y) {
    for (int x = 0; x < syn.map.width; ++x) {
      if (!syn.foreground[static_cast<std::size_t>(y) * syn.map.width + x]) continue;
      const double* a = syn.map.pixel(x, y);
      const double* b = f_test.pixel(x, y);
      const double ab = kernels::dot(a, b, mesh.dim);
      const double na = std::sqrt(kernels::dot(a, a, mesh.dim));
      const double nb = std::sqrt(kernels::dot(b, b, mesh.dim));
      total += (na > 0.0 && nb > 0.0) ? ab / (na * nb) : 0.0;
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorCode::kInternal, "pose renders no foreground");
  return 1.0 - total / count;
}

PoseScorer::PoseScorer(const FeatureMap& f_test, const NeuralMesh& mesh, const Camera& camera)
    : mesh_(mesh), camera_(camera), width_(f_test.width), height_(f_test.height) {
  if (f_test.width != camera.feature_w() || f_test.height != camera.feature_h() || f_test.channels != mesh.dim) {
    throw Error(ErrorCode::kShape, "test feature map does not match the camera");
  }
  const int k_count = static_cast<int>(mesh.size());
  const int pixels = width_ * height_;
  similarity_.assign(static_cast<std::size_t>(pixels) * k_count, 0.0);
  kernels::gemm_abt_acc(pixels, k_count, mesh.dim, f_test.data.data(), mesh.dim, mesh.features.data(), mesh.dim,
                        similarity_.data(), k_count);
  test_norm_.resize(pixels);
  for (int p = 0; p < pixels; ++p) {
    const double* b = f_test.data.data() + static_cast<std::size_t>(p) * mesh.dim;
    test_norm_[p] = std::sqrt(kernels::dot(b, b, mesh.dim));
  }
  gram_.reserve(mesh.geometry.faces.size());
  for (const auto& [a, b, c] : mesh.geometry.faces) {
    auto d = [&](int i, int j) { return kernels::dot(mesh.feature(i), mesh.feature(j), mesh.dim); };
    gram_.push_back({d(a, a), d(b, b), d(c, c), d(a, b), d(a, c), d(b, c)});
  }
}

double PoseScorer::loss(const Rotation& pose) const {
  const FragmentBuffer buf =
      rasterize(mesh_.geometry.vertices, mesh_.geometry.faces, pose, camera_, camera_.stride);
  const std::size_t k_count = mesh_.size();
  double total = 0.0;
  int count = 0;
  for (int p = 0; p < width_ * height_; ++p) {
    const Fragment& frag = buf.fragments[p];
    if (frag.face < 0) continue;
    ++count;
    if (test_norm_[p] <= 0.0) continue;
    const auto& face = mesh_.geometry.faces[frag.face];
    const auto& w = frag.weights;
    const double* s = similarity_.data() + static_cast<std::size_t>(p) * k_count;
    const double ab = w[0] * s[face[0]] + w[1] * s[face[1]] + w[2] * s[face[2]];
    const auto& g = gram_[frag.face];
    const double aa = w[0] * w[0] * g[0] + w[1] * w[1] * g[1] + w[2] * w[2] * g[2] +
                      2.0 * (w[0] * w[1] * g[3] + w[0] * w[2] * g[4] + w[1] * w[2] * g[5]);
    if (aa <= 0.0) continue;
    total += ab / (std::sqrt(aa) * test_norm_[p]);
  }
  if (count == 0) throw Error(ErrorCode::kInternal, "pose renders no foreground");
  return 1.0 - total / count;
}

namespace {

Rotation perturb(const Rotation& pose, double az, double el, double theta) {
  return rotation_z(deg2rad(theta)) * rotation_x(deg2rad(-el)) * rotation_y(deg2rad(az)) * pose;
}

StartTrace descend(const PoseScorer& scorer, const Rotation& init, const EstimateOptions& options) {
  StartTrace trace;
  trace.init = init;
  Rotation pose = init;
  double loss = scorer.loss(pose);
  trace.losses.push_back(loss);
  double step = options.step_size;
  const double h = options.fd_step;
  bool need_gradient = true;
  double g[3] = {0, 0, 0};
  double g_norm = 0.0;
  while (trace.iterations < options.steps && step >= options.min_step) {
    if (need_gradient) {
      for (int i = 0; i < 3; ++i) {
        double plus[3] = {0, 0, 0}, minus[3] = {0, 0, 0};
        plus[i] = h;
        minus[i] = -h;
        g[i] = (scorer.loss(perturb(pose, plus[0], plus[1], plus[2])) -
                scorer.loss(perturb(pose, minus[0], minus[1], minus[2]))) /
               (2.0 * h);
      }
      g_norm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
      need_gradient = false;
      if (g_norm == 0.0) break;
    }
    ++trace.iterations;
    const double scale = -step / g_norm;
    const Rotation candidate = perturb(pose, scale * g[0], scale * g[1], scale * g[2]);
    const double candidate_loss = scorer.loss(candidate);
    if (candidate_loss < loss) {
      pose = candidate;
      loss = candidate_loss;
      trace.losses.push_back(loss);
      need_gradient = true;
    } else {
      step *= 0.5;
    }
  }
  trace.final_pose = pose;
  trace.final_loss = loss;
  return trace;
}

}  // namespace

PoseEstimate estimate_pose(const FeatureMap& f_test, const NeuralMesh& mesh, const Camera& camera,
                           const std::vector<Rotation>& inits, const EstimateOptions& options) {
  if (inits.empty()) throw Error(ErrorCode::kInvalidArgument, "estimate_pose needs at least one initial pose");
  const PoseScorer scorer(f_test, mesh, camera);
  PoseEstimate out;
  std::size_t best = 0;
  for (std::size_t i = 0; i < inits.size(); ++i) {
    out.starts.push_back(descend(scorer, inits[i], options));
    out.iterations += out.starts.back().iterations;
    if (out.starts[i].final_loss < out.starts[best].final_loss) best = i;
  }
  out.pose = out.starts[best].final_pose;
  out.residual = out.starts[best].final_loss;
  return out;
}

std::vector<Rotation> default_inits() { return so3_grid(12, 4, 3); }

std::vector<Rotation> align_predictions(const std::vector<Rotation>& preds, const Rotation& anchor_pred,
                                        const Rotation& anchor_gt) {
  const Rotation c = anchor_pred.transpose() * anchor_gt;
  std::vector<Rotation> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(p * c);
  return out;
}

MetricsReport metrics_from_errors(const std::vector<double>& errors_deg) {
  if (errors_deg.empty()) throw Error(ErrorCode::kInvalidArgument, "metrics need at least one prediction");
  MetricsReport r;
  r.errors = errors_deg;
  std::vector<double> sorted = errors_deg;
  std::sort(sorted.begin(), sorted.end());
  r.median = sorted[(sorted.size() - 1) / 2];
  const double n = static_cast<double>(sorted.size());
  r.acc30 = std::count_if(sorted.begin(), sorted.end(), [](double e) { return e <= 30.0; }) / n;
  r.acc10 = std::count_if(sorted.begin(), sorted.end(), [](double e) { return e <= 10.0; }) / n;
  return r;
}

MetricsReport compute_metrics(const std::vector<Rotation>& preds, const std::vector<Rotation>& gts) {
  if (preds.size() != gts.size()) throw Error(ErrorCode::kInvalidArgument, "prediction and truth counts differ");
  std::vector<double> errors;
  errors.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) errors.push_back(rad2deg(geodesic_distance(preds[i], gts[i])));
  return metrics_from_errors(errors);
}

std::string evaluation_report_json(const std::string& config_digest, const std::vector<ImageResult>& images,
                                   const MetricsReport& metrics) {
  nlohmann::json per_image = nlohmann::json::array();
  for (const auto& img : images) {
    per_image.push_back({{"id", img.id},
                         {"pred", detail::to_json(img.pred)},
                         {"gt", detail::to_json(img.gt)},
                         {"error_deg", img.error_deg}});
  }
  const nlohmann::json j{{"config_digest", config_digest},
                         {"per_image", per_image},
                         {"median", metrics.median},
                         {"acc30", metrics.acc30},
                         {"acc10", metrics.acc10}};
  return j.dump(2);
}

std::string evaluation_report_csv(const std::vector<ImageResult>& images) {
  std::ostringstream out;
  out << "id,error_deg";
  for (int i = 0; i < 9; ++i) out << ",pred" << i;
  for (int i = 0; i < 9; ++i) out << ",gt" << i;
  out << "\n";
  char buf[32];
  for (const auto& img : images) {
    std::snprintf(buf, sizeof(buf), "%.17g", img.error_deg);
    out << img.id << "," << buf;
    for (double v : img.pred.row_major()) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "," << buf;
    }
    for (double v : img.gt.row_major()) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "," << buf;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace nmpose
