#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nmpose/canonicalize.hpp"
#include "nmpose/infer.hpp"
#include "nmpose/neural_mesh.hpp"
#include "nmpose/raster.hpp"
#include "nmpose/viewgen.hpp"

namespace nmpose {

inline constexpr int kConfigSchemaVersion = 1;

struct DatasetConfig {
  int train_instances = 2;
  int test_instances = 1;
  int test_views = 10;             // held-out (az, el) renders per test instance
  double test_elevation_max = 40;  // degrees
  // Hidden canonical offsets of the training instances as lookat triples.
  // Missing entries are drawn as azimuth rotations within +-offset_max_deg.
  std::vector<ViewSpec> offsets;
  double offset_max_deg = 45.0;
};

struct InferConfig {
  int grid_az = 12;
  int grid_el = 4;
  int grid_theta = 3;
  EstimateOptions options;
  std::string anchor;  // image id "<instance>/<NNN>"; empty picks the first test image
};

struct PipelineConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  Camera camera{4.0, 736.0, 512, 512, 8};
  FamilyConfig family;
  DatasetConfig dataset;
  NoiseConfig noise;
  TrainConfig train;
  MergeConfig merge;
  InferConfig infer;
  bool retrain_after_merge = false;
  int retrain_epochs = 5;

  // Unknown keys and bad values throw Error(kConfig). The top-level seed is
  // propagated into every seeded block.
  static PipelineConfig from_json(const std::string& text);
  std::string to_json() const;
  // Stable 64-bit FNV-1a digest of to_json(), hex encoded.
  std::string digest() const;
  void set_seed(std::uint64_t seed);
  void validate() const;
};

PipelineConfig load_config(const std::filesystem::path& path);

// Progress sink for human-readable stage logs.
using StageLog = std::function<void(const std::string&)>;

// One pipeline instance per output directory.
class DirectoryLock {
 public:
  // Throws Error(kResourceLimit) when the directory is already locked.
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Dataset layout: train/<id>/, test/<id>/ (image sets) and _truth/<id>.json.
void cmd_gen(const PipelineConfig& config, const std::filesystem::path& out, const StageLog& log = {});

// Model layout: encoder.nmen, background.nmbk, meshes/<id>.nmbk, history.json.
void cmd_train(const PipelineConfig& config, const std::filesystem::path& data, const std::filesystem::path& model,
               const StageLog& log = {});

// Adds category.nmbk, merge_report.json and relabeled/<id>.json to the model.
void cmd_merge(const PipelineConfig& config, const std::filesystem::path& model, const std::filesystem::path& data,
               const StageLog& log = {});

struct Prediction {
  std::string id;
  Rotation pose;
  double residual = 0.0;
};

// Pose estimates for every test image, written as JSON to `out`.
// `encoder_ckpt` replaces <model>/encoder.nmen when given.
std::vector<Prediction> cmd_infer(const PipelineConfig& config, const std::filesystem::path& model,
                                  const std::filesystem::path& data, const std::filesystem::path& out,
                                  const StageLog& log = {},
                                  const std::optional<std::filesystem::path>& encoder_ckpt = {});

// Aligns predictions with the anchor image's label and scores every other
// test image. Reads predictions from `predictions` when given, otherwise runs
// inference. Writes report.json and report.csv into `out`.
MetricsReport cmd_eval(const PipelineConfig& config, const std::filesystem::path& model,
                       const std::filesystem::path& data, const std::string& anchor,
                       const std::filesystem::path& out, const std::optional<std::filesystem::path>& predictions,
                       const StageLog& log = {});

// gen -> train -> merge (-> retrain) -> infer -> eval under <out>, holding the
// directory lock. Stage errors are rethrown prefixed with the stage name.
MetricsReport cmd_run(const PipelineConfig& config, const std::filesystem::path& out, const StageLog& log = {});

// Fixed-width table of a report, optionally with an SVG error histogram.
// Throws Error(kMalformedReport).
std::string cmd_report(const std::filesystem::path& report, const std::optional<std::filesystem::path>& svg);

std::string error_histogram_svg(const std::vector<double>& errors_deg);

}  // namespace nmpose
