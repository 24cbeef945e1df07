#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nmpose/encoder.hpp"
#include "nmpose/feature_map.hpp"
#include "nmpose/image.hpp"
#include "nmpose/raster.hpp"
#include "nmpose/so3.hpp"
#include "nmpose/viewgen.hpp"

namespace nmpose {

// Fixed polyhedron geometry carrying one unit feature vector per vertex.
struct NeuralMesh {
  std::string instance_id;
  PolyMesh geometry;
  int dim = 0;
  std::vector<double> features;  // K x dim, row-major

  std::size_t size() const { return geometry.vertices.size(); }
  double* feature(std::size_t k) { return features.data() + k * dim; }
  const double* feature(std::size_t k) const { return features.data() + k * dim; }
  std::span<const double> row(std::size_t k) const { return {feature(k), static_cast<std::size_t>(dim)}; }

  // Random unit features from a seeded RNG.
  static NeuralMesh random(const PolyMesh& geometry, int dim, std::uint64_t seed, std::string instance_id = {});
};

struct BackgroundBank {
  int dim = 0;
  std::vector<double> entries;  // B x dim, unit rows

  std::size_t size() const { return dim == 0 ? 0 : entries.size() / dim; }
  const double* entry(std::size_t b) const { return entries.data() + b * dim; }
  double* entry(std::size_t b) { return entries.data() + b * dim; }

  static BackgroundBank random(int count, int dim, std::uint64_t seed);
};

struct TrainConfig {
  int dim = 64;
  int mesh_level = 2;
  double radius = 1.0;
  double beta = 0.9;
  double kappa = 1.0 / 0.07;
  double rho = -1.0;    // neighbourhood radius; negative means 0.1 * radius
  double tau_r = -1.0;  // visibility threshold; negative means 0.05 * radius
  int epochs = 30;
  double learning_rate = 1e-3;
  bool adam = true;  // false: plain SGD (collapses from scratch at the tested rates)
  int bank_size = 512;
  std::uint64_t seed = 0;

  double neighbourhood_radius() const { return rho < 0.0 ? 0.1 * radius : rho; }
  double visibility_threshold() const { return tau_r < 0.0 ? 0.05 * radius : tau_r; }
  // Throws Error(kConfig).
  void validate() const;
};

// theta_k <- o_k (1 - beta) f_k + (1 - o_k + beta o_k) theta_k, renormalized.
// `samples` is K x dim; rows with o_k = 0 are ignored.
void momentum_update(NeuralMesh& mesh, std::span<const double> samples, std::span<const std::uint8_t> visible,
                     double beta);

// Per-vertex lists of vertices within geodesic (great-circle) distance rho.
std::vector<std::vector<int>> vertex_neighbourhoods(const PolyMesh& geometry, double rho);

struct LossResult {
  double loss = 0.0;
  FeatureMap gradient;  // d loss / d map
  int terms = 0;        // visible vertices or sampled background pixels
};

// Summed contrastive loss over visible vertices. Each vertex's denominator
// holds its own feature, every feature outside its neighbourhood and every
// background entry. Vertices projecting outside the map are treated as
// hidden. terms = 0 signals an image to skip.
LossResult foreground_loss(const FeatureMap& map, const VertexScreenData& screen, const NeuralMesh& mesh,
                           const BackgroundBank& bg, double kappa,
                           const std::vector<std::vector<int>>& neighbourhoods);

// Feature-map pixels whose stride x stride mask block holds no foreground.
std::vector<int> background_pixels(const Mask& mask, int stride, int map_w, int map_h);

struct BackgroundLoss : LossResult {
  std::vector<int> pixels;      // sampled pixel indices (y * w + x)
  std::vector<int> assignment;  // nearest bank entry per sampled pixel
};

// Each sampled background feature is pulled toward its nearest bank entry
// with every vertex feature as a negative. At most bank-size pixels are
// sampled (uniformly without replacement, via `rng`) when more are available.
BackgroundLoss background_loss(const FeatureMap& map, std::span<const int> background, const BackgroundBank& bg,
                               const NeuralMesh& mesh, double kappa, std::mt19937_64* rng);

// Momentum update of the bank from the features assigned to each entry.
void update_background_bank(BackgroundBank& bg, const FeatureMap& map, const BackgroundLoss& assigned, double beta);

struct EpochStats {
  double mean_foreground = 0.0;
  double mean_background = 0.0;
  int views = 0;
  int skipped = 0;
};

struct TrainResult {
  EncoderParams encoder;
  std::vector<NeuralMesh> meshes;
  BackgroundBank bank;
  std::vector<EpochStats> history;
};

using TrainLogger = std::function<void(int epoch, const EpochStats&)>;

// Joint training of one shared encoder, one mesh per image set and a shared
// background bank. `warm_start` continues from an earlier result instead of
// the seeded initialization (its meshes must parallel `instances`). Throws
// Error(kConfig) when the sets disagree on the camera.
TrainResult train(std::span<const ImageSet> instances, const TrainConfig& config, const TrainLogger& log = {},
                  const TrainResult* warm_start = nullptr);

// Mean f_k . theta_k over visible vertices of every view, at the label poses.
double mean_vertex_alignment(const EncoderParams& encoder, const ImageSet& set, const NeuralMesh& mesh,
                             const TrainConfig& config);

// "NMBK", u32 K, u32 d, K * d f32; the geometry and id go to <path>.json.
void save_neural_mesh(const std::filesystem::path& path, const NeuralMesh& mesh);
NeuralMesh load_neural_mesh(const std::filesystem::path& path);
void save_background_bank(const std::filesystem::path& path, const BackgroundBank& bank);
BackgroundBank load_background_bank(const std::filesystem::path& path);

}  // namespace nmpose
