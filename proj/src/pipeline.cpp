#include "nmpose/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "json_util.hpp"
#include "nmpose/error.hpp"
#include "nmpose/io.hpp"

namespace nmpose {

namespace fs = std::filesystem;
using detail::json;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::kConfig, what); }

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ViewSpec spec_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) config_error("offsets entries must be [az, el, theta] triples");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

std::string instance_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d", prefix, i);
  return buf;
}

std::string image_id(const std::string& instance, std::size_t view) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "/%03zu", view);
  return instance + buf;
}

// Instance directories (holding a manifest) under `dir/<split>`, or under
// `dir` itself when the split directory is absent.
std::vector<fs::path> instance_dirs(const fs::path& dir, const char* split) {
  fs::path root = dir / split;
  if (!fs::is_directory(root)) root = dir;
  if (!fs::is_directory(root)) throw Error(ErrorCode::kMissingFile, "missing data directory " + root.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '_' &&
        fs::exists(entry.path() / "manifest.json")) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorCode::kMissingFile, "no image sets under " + root.string());
  return out;
}

std::vector<ImageSet> load_sets(const fs::path& data, const char* split, const LoadOptions& options) {
  std::vector<ImageSet> sets;
  for (const auto& dir : instance_dirs(data, split)) sets.push_back(load_image_set(dir, options));
  return sets;
}

void emit(const StageLog& log, const std::string& line) {
  if (log) log(line);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

template <typename F>
auto stage(const char* name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.code(), std::string(name) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kInternal, std::string(name) + ": " + e.what());
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j, {"schema_version", "seed", "camera", "family", "dataset", "noise", "train", "merge", "infer",
                   "retrain_after_merge", "retrain_epochs"},
               "config");
    if (!j.contains("schema_version")) config_error("config lacks schema_version");
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != kConfigSchemaVersion) {
      config_error("unsupported schema_version " + std::to_string(c.schema_version));
    }
    read(j, "seed", c.seed);
    if (j.contains("camera")) {
      const auto& cj = j.at("camera");
      check_keys(cj, {"distance", "focal", "image_w", "image_h", "stride"}, "camera");
      read(cj, "distance", c.camera.distance);
      read(cj, "focal", c.camera.focal);
      read(cj, "image_w", c.camera.image_w);
      read(cj, "image_h", c.camera.image_h);
      read(cj, "stride", c.camera.stride);
    }
    if (j.contains("family")) {
      const auto& f = j.at("family");
      check_keys(f, {"mesh_level", "radius", "albedo_blobs", "instance_variation", "shape_jitter"}, "family");
      read(f, "mesh_level", c.family.mesh_level);
      read(f, "radius", c.family.radius);
      read(f, "albedo_blobs", c.family.albedo_blobs);
      read(f, "instance_variation", c.family.instance_variation);
      read(f, "shape_jitter", c.family.shape_jitter);
    }
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      check_keys(d, {"train_instances", "test_instances", "test_views", "test_elevation_max", "offsets",
                     "offset_max_deg"},
                 "dataset");
      read(d, "train_instances", c.dataset.train_instances);
      read(d, "test_instances", c.dataset.test_instances);
      read(d, "test_views", c.dataset.test_views);
      read(d, "test_elevation_max", c.dataset.test_elevation_max);
      read(d, "offset_max_deg", c.dataset.offset_max_deg);
      if (d.contains("offsets")) {
        for (const auto& o : d.at("offsets")) c.dataset.offsets.push_back(spec_from_json(o));
      }
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      check_keys(n, {"pose_sigma", "texture_sigma", "artifact_rate"}, "noise");
      read(n, "pose_sigma", c.noise.pose_sigma);
      read(n, "texture_sigma", c.noise.texture_sigma);
      read(n, "artifact_rate", c.noise.artifact_rate);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, {"dim", "mesh_level", "radius", "beta", "kappa", "rho", "tau_r", "epochs", "learning_rate",
                     "adam", "bank_size"},
                 "train");
      read(t, "dim", c.train.dim);
      read(t, "mesh_level", c.train.mesh_level);
      read(t, "radius", c.train.radius);
      read(t, "beta", c.train.beta);
      read(t, "kappa", c.train.kappa);
      read(t, "rho", c.train.rho);
      read(t, "tau_r", c.train.tau_r);
      read(t, "epochs", c.train.epochs);
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "adam", c.train.adam);
      read(t, "bank_size", c.train.bank_size);
    }
    if (j.contains("merge")) {
      const auto& m = j.at("merge");
      check_keys(m, {"tau_merge", "k_nn", "epsilon", "grid_az", "grid_el", "refinement_steps"}, "merge");
      read(m, "tau_merge", c.merge.tau_merge);
      read(m, "k_nn", c.merge.k_nn);
      read(m, "epsilon", c.merge.epsilon);
      read(m, "grid_az", c.merge.grid_az);
      read(m, "grid_el", c.merge.grid_el);
      read(m, "refinement_steps", c.merge.refinement_steps);
    }
    if (j.contains("infer")) {
      const auto& i = j.at("infer");
      check_keys(i, {"grid_az", "grid_el", "grid_theta", "steps", "step_size", "fd_step", "min_step", "anchor"},
                 "infer");
      read(i, "grid_az", c.infer.grid_az);
      read(i, "grid_el", c.infer.grid_el);
      read(i, "grid_theta", c.infer.grid_theta);
      read(i, "steps", c.infer.options.steps);
      read(i, "step_size", c.infer.options.step_size);
      read(i, "fd_step", c.infer.options.fd_step);
      read(i, "min_step", c.infer.options.min_step);
      read(i, "anchor", c.infer.anchor);
    }
    read(j, "retrain_after_merge", c.retrain_after_merge);
    read(j, "retrain_epochs", c.retrain_epochs);
  } catch (const json::exception& e) {
    config_error(std::string("config: ") + e.what());
  }
  c.set_seed(c.seed);
  c.validate();
  return c;
}

std::string PipelineConfig::to_json() const {
  json offsets = json::array();
  for (const auto& o : dataset.offsets) offsets.push_back({o.az, o.el, o.theta});
  const json j{
      {"schema_version", schema_version},
      {"seed", seed},
      {"camera", detail::to_json(camera)},
      {"family",
       {{"mesh_level", family.mesh_level},
        {"radius", family.radius},
        {"albedo_blobs", family.albedo_blobs},
        {"instance_variation", family.instance_variation},
        {"shape_jitter", family.shape_jitter}}},
      {"dataset",
       {{"train_instances", dataset.train_instances},
        {"test_instances", dataset.test_instances},
        {"test_views", dataset.test_views},
        {"test_elevation_max", dataset.test_elevation_max},
        {"offsets", offsets},
        {"offset_max_deg", dataset.offset_max_deg}}},
      {"noise",
       {{"pose_sigma", noise.pose_sigma},
        {"texture_sigma", noise.texture_sigma},
        {"artifact_rate", noise.artifact_rate}}},
      {"train",
       {{"dim", train.dim},
        {"mesh_level", train.mesh_level},
        {"radius", train.radius},
        {"beta", train.beta},
        {"kappa", train.kappa},
        {"rho", train.rho},
        {"tau_r", train.tau_r},
        {"epochs", train.epochs},
        {"learning_rate", train.learning_rate},
        {"adam", train.adam},
        {"bank_size", train.bank_size}}},
      {"merge",
       {{"tau_merge", merge.tau_merge},
        {"k_nn", merge.k_nn},
        {"epsilon", merge.epsilon},
        {"grid_az", merge.grid_az},
        {"grid_el", merge.grid_el},
        {"refinement_steps", merge.refinement_steps}}},
      {"infer",
       {{"grid_az", infer.grid_az},
        {"grid_el", infer.grid_el},
        {"grid_theta", infer.grid_theta},
        {"steps", infer.options.steps},
        {"step_size", infer.options.step_size},
        {"fd_step", infer.options.fd_step},
        {"min_step", infer.options.min_step},
        {"anchor", infer.anchor}}},
      {"retrain_after_merge", retrain_after_merge},
      {"retrain_epochs", retrain_epochs},
  };
  return j.dump(2);
}

std::string PipelineConfig::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  family.family_seed = mix(s, 1);
  noise.seed = mix(s, 2);
  train.seed = mix(s, 3);
}

void PipelineConfig::validate() const {
  try {
    camera.validate_for_radius(family.radius * (1.0 + family.shape_jitter));
    noise.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
  train.validate();
  merge.validate();
  if (family.mesh_level < 0 || family.mesh_level > kMaxPolyhedronLevel) config_error("family.mesh_level out of range");
  if (!(family.radius > 0.0)) config_error("family.radius must be positive");
  if (family.shape_jitter < 0.0 || family.shape_jitter > 0.1) config_error("family.shape_jitter must lie in [0, 0.1]");
  if (family.albedo_blobs < 0) config_error("family.albedo_blobs must be non-negative");
  if (dataset.train_instances < 1) config_error("dataset.train_instances must be at least 1");
  if (dataset.test_instances < 1 || dataset.test_views < 1) config_error("the test split must not be empty");
  if (dataset.test_instances * dataset.test_views < 2) config_error("the test split needs an anchor plus one image");
  if (!(dataset.test_elevation_max >= 0.0 && dataset.test_elevation_max < 90.0)) {
    config_error("dataset.test_elevation_max must lie in [0, 90)");
  }
  for (const auto& o : dataset.offsets) {
    try {
      lookat(o);
    } catch (const Error& e) {
      config_error(std::string("dataset.offsets: ") + e.what());
    }
  }
  if (!(dataset.offset_max_deg >= 0.0 && dataset.offset_max_deg <= 180.0)) {
    config_error("dataset.offset_max_deg must lie in [0, 180]");
  }
  if (infer.grid_az < 1 || infer.grid_el < 1 || infer.grid_theta < 1) config_error("infer grid sizes must be positive");
  if (infer.options.steps < 0 || !(infer.options.step_size > 0.0) || !(infer.options.fd_step > 0.0) ||
      !(infer.options.min_step > 0.0)) {
    config_error("infer step settings must be positive");
  }
  if (retrain_epochs < 0) config_error("retrain_epochs must be non-negative");
  if (train.mesh_level != family.mesh_level || train.radius != family.radius) {
    // Different generator and model geometry is allowed; only the radius
    // has to fit in front of the camera.
    try {
      camera.validate_for_radius(train.radius);
    } catch (const Error& e) {
      config_error(e.what());
    }
  }
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) config_error("config file " + path.string() + " does not exist");
  return PipelineConfig::from_json(read_text_file(path));
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".nmpose.lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    path_.clear();
    throw Error(ErrorCode::kResourceLimit, "output directory " + dir.string() + " is locked by another pipeline");
  }
  std::fclose(f);
}

DirectoryLock::~DirectoryLock() {
  if (!path_.empty()) {
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

void cmd_gen(const PipelineConfig& config, const fs::path& out, const StageLog& log) {
  config.validate();
  fs::create_directories(out);
  std::mt19937_64 rng(mix(config.seed, 10));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto grid = view_grid();

  for (int i = 0; i < config.dataset.train_instances; ++i) {
    const std::string id = instance_name("train", i);
    const double draw = unit(rng);
    Rotation offset = lookat({(2.0 * draw - 1.0) * config.dataset.offset_max_deg, 0.0, 0.0});
    if (i < static_cast<int>(config.dataset.offsets.size())) offset = lookat(config.dataset.offsets[i]);
    const SyntheticObject obj = make_synthetic_object(config.family, 1000 + i, id, offset);
    const GeneratedSet set = generate_image_set(obj, grid, config.noise, config.camera);
    save_image_set(set.images, out / "train" / id);
    fs::create_directories(out / "_truth");
    save_generation_truth(set.truth, out / "_truth" / (id + ".json"));
    emit(log, "gen: " + id + " (" + std::to_string(set.images.views.size()) + " views)");
  }

  // Held-out instances in the category frame, rendered at unseen views.
  for (int i = 0; i < config.dataset.test_instances; ++i) {
    const std::string id = instance_name("test", i);
    std::vector<ViewSpec> specs;
    for (int v = 0; v < config.dataset.test_views; ++v) {
      const double az = -180.0 + 360.0 * unit(rng);
      const double el = (2.0 * unit(rng) - 1.0) * config.dataset.test_elevation_max;
      specs.push_back({az, el, 0.0});
    }
    const SyntheticObject obj = make_synthetic_object(config.family, 5000 + i, id);
    const GeneratedSet set = generate_image_set(obj, specs, NoiseConfig{}, config.camera, false);
    save_image_set(set.images, out / "test" / id);
    save_generation_truth(set.truth, out / "_truth" / (id + ".json"));
    emit(log, "gen: " + id + " (" + std::to_string(set.images.views.size()) + " views)");
  }
}

namespace {

json history_json(const std::vector<EpochStats>& history) {
  json arr = json::array();
  for (std::size_t e = 0; e < history.size(); ++e) {
    arr.push_back({{"epoch", e},
                   {"foreground", history[e].mean_foreground},
                   {"background", history[e].mean_background},
                   {"views", history[e].views},
                   {"skipped", history[e].skipped}});
  }
  return arr;
}

TrainLogger epoch_logger(const StageLog& log, const char* what) {
  return [log, what](int epoch, const EpochStats& s) {
    emit(log, std::string(what) + ": epoch " + std::to_string(epoch) + " fg " + fixed(s.mean_foreground, 4) +
                  " bg " + fixed(s.mean_background, 4) + (s.skipped ? " skipped " + std::to_string(s.skipped) : ""));
  };
}

}  // namespace

void cmd_train(const PipelineConfig& config, const fs::path& data, const fs::path& model, const StageLog& log) {
  const auto sets = load_sets(data, "train", {});
  for (const auto& s : sets) {
    if (s.views.size() != 84 && s.views.size() != 85) {
      throw Error(ErrorCode::kViewCount, s.instance_id + " has " + std::to_string(s.views.size()) + " views");
    }
  }
  emit(log, "train: " + std::to_string(sets.size()) + " image sets");
  const TrainResult result = train(sets, config.train, epoch_logger(log, "train"));
  fs::create_directories(model / "meshes");
  save_encoder(model / "encoder.nmen", result.encoder);
  save_background_bank(model / "background.nmbk", result.bank);
  for (const auto& mesh : result.meshes) save_neural_mesh(model / "meshes" / (mesh.instance_id + ".nmbk"), mesh);
  write_text_file(model / "history.json", history_json(result.history).dump(2));
}

void cmd_merge(const PipelineConfig& config, const fs::path& model, const fs::path& data, const StageLog& log) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(model / "meshes")) {
    if (entry.path().extension() == ".nmbk") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::kMissingFile, "no instance meshes under " + (model / "meshes").string());
  std::vector<NeuralMesh> meshes;
  for (const auto& f : files) meshes.push_back(load_neural_mesh(f));

  std::vector<ImageSet> sets;
  if (!data.empty()) {
    const auto loaded = load_sets(data, "train", {});
    std::map<std::string, const ImageSet*> by_id;
    for (const auto& s : loaded) by_id[s.instance_id] = &s;
    for (const auto& m : meshes) {
      const auto it = by_id.find(m.instance_id);
      if (it == by_id.end()) throw Error(ErrorCode::kMissingFile, "no image set for mesh " + m.instance_id);
      sets.push_back(*it->second);
    }
  }

  MergeResult merged = merge_all(meshes, sets, config.merge, mix(config.seed, 20));
  emit(log, "merge: anchor " + meshes[merged.anchor].instance_id);
  for (const auto& r : merged.report) {
    emit(log, "merge: " + r.instance_id + " distance " + fixed(r.distance, 4) + (r.merged ? " merged" : " kept apart"));
  }
  merged.category.instance_id = "category";
  write_text_file(model / "merge_report.json", merge_report_json(merged.report));

  fs::create_directories(model / "relabeled");
  for (const auto& s : merged.relabeled) {
    json poses = json::array();
    for (const auto& v : s.views) poses.push_back(detail::to_json(v.label));
    write_text_file(model / "relabeled" / (s.instance_id + ".json"),
                    json{{"instance_id", s.instance_id}, {"poses", poses}}.dump(2));
  }

  if (config.retrain_after_merge && !sets.empty()) {
    // The anchor keeps training on every merged instance's relabeled views.
    ImageSet pooled;
    pooled.instance_id = "category";
    pooled.camera = sets.front().camera;
    std::vector<bool> merged_flag(meshes.size(), false);
    merged_flag[merged.anchor] = true;
    for (const auto& r : merged.report) {
      for (std::size_t i = 0; i < meshes.size(); ++i) {
        if (meshes[i].instance_id == r.instance_id && r.merged) merged_flag[i] = true;
      }
    }
    for (std::size_t i = 0; i < meshes.size(); ++i) {
      if (!merged_flag[i]) continue;
      for (const auto& v : merged.relabeled[i].views) pooled.views.push_back(v);
    }
    TrainResult warm;
    warm.encoder = load_encoder(model / "encoder.nmen");
    warm.bank = load_background_bank(model / "background.nmbk");
    warm.meshes = {merged.category};
    TrainConfig retrain = config.train;
    retrain.epochs = config.retrain_epochs;
    const std::vector<ImageSet> pooled_sets{pooled};
    const TrainResult result = train(pooled_sets, retrain, epoch_logger(log, "retrain"), &warm);
    merged.category = result.meshes.front();
    save_encoder(model / "encoder.nmen", result.encoder);
    save_background_bank(model / "background.nmbk", result.bank);
    write_text_file(model / "retrain_history.json", history_json(result.history).dump(2));
  }
  save_neural_mesh(model / "category.nmbk", merged.category);
}

std::vector<Prediction> cmd_infer(const PipelineConfig& config, const fs::path& model, const fs::path& data,
                                  const fs::path& out, const StageLog& log,
                                  const std::optional<fs::path>& encoder_ckpt) {
  const EncoderParams encoder = load_encoder(encoder_ckpt ? *encoder_ckpt : model / "encoder.nmen");
  const NeuralMesh category = load_neural_mesh(model / "category.nmbk");
  LoadOptions any;
  any.view_counts.clear();
  const auto sets = load_sets(data, "test", any);
  const auto inits = so3_grid(config.infer.grid_az, config.infer.grid_el, config.infer.grid_theta);

  std::vector<Prediction> preds;
  for (const auto& set : sets) {
    if (set.camera.feature_w() * 8 != set.camera.image_w) {
      throw Error(ErrorCode::kShape, set.instance_id + ": camera stride must equal the encoder stride");
    }
    for (std::size_t v = 0; v < set.views.size(); ++v) {
      const FeatureMap f = encode(encoder, set.views[v].image);
      const PoseEstimate est = estimate_pose(f, category, set.camera, inits, config.infer.options);
      preds.push_back({image_id(set.instance_id, v), est.pose, est.residual});
      emit(log, "infer: " + preds.back().id + " residual " + fixed(est.residual, 4));
    }
  }
  json arr = json::array();
  for (const auto& p : preds) arr.push_back({{"id", p.id}, {"pose", detail::to_json(p.pose)}, {"residual", p.residual}});
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text_file(out, arr.dump(2));
  return preds;
}

MetricsReport cmd_eval(const PipelineConfig& config, const fs::path& model, const fs::path& data,
                       const std::string& anchor, const fs::path& out, const std::optional<fs::path>& predictions,
                       const StageLog& log) {
  LoadOptions any;
  any.view_counts.clear();
  const auto sets = load_sets(data, "test", any);
  std::vector<std::pair<std::string, Rotation>> gts;
  for (const auto& set : sets) {
    for (std::size_t v = 0; v < set.views.size(); ++v) gts.emplace_back(image_id(set.instance_id, v), set.views[v].label);
  }

  std::map<std::string, Rotation> pred_by_id;
  if (predictions) {
    try {
      const json j = json::parse(read_text_file(*predictions));
      for (const auto& p : j) pred_by_id[p.at("id").get<std::string>()] = detail::rotation_from_json(p.at("pose"));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kIo, predictions->string() + ": " + e.what());
    }
  } else {
    for (const auto& p : cmd_infer(config, model, data, out / "predictions.json", log)) pred_by_id[p.id] = p.pose;
  }

  const std::string anchor_id = anchor.empty() ? gts.front().first : anchor;
  const auto anchor_it = std::find_if(gts.begin(), gts.end(), [&](const auto& g) { return g.first == anchor_id; });
  if (anchor_it == gts.end()) throw Error(ErrorCode::kConfig, "anchor image " + anchor_id + " is not in the test split");
  if (!pred_by_id.count(anchor_id)) throw Error(ErrorCode::kMissingFile, "no prediction for anchor " + anchor_id);

  std::vector<std::string> ids;
  std::vector<Rotation> preds, truth;
  for (const auto& [id, gt] : gts) {
    if (id == anchor_id) continue;
    const auto it = pred_by_id.find(id);
    if (it == pred_by_id.end()) throw Error(ErrorCode::kMissingFile, "no prediction for " + id);
    ids.push_back(id);
    preds.push_back(it->second);
    truth.push_back(gt);
  }
  const auto aligned = align_predictions(preds, pred_by_id.at(anchor_id), anchor_it->second);
  const MetricsReport metrics = compute_metrics(aligned, truth);
  std::vector<ImageResult> images;
  for (std::size_t i = 0; i < ids.size(); ++i) images.push_back({ids[i], aligned[i], truth[i], metrics.errors[i]});

  fs::create_directories(out);
  write_text_file(out / "report.json", evaluation_report_json(config.digest(), images, metrics));
  write_text_file(out / "report.csv", evaluation_report_csv(images));
  emit(log, "eval: median " + fixed(metrics.median, 2) + " acc30 " + fixed(metrics.acc30, 3) + " acc10 " +
                fixed(metrics.acc10, 3));
  return metrics;
}

MetricsReport cmd_run(const PipelineConfig& config, const fs::path& out, const StageLog& log) {
  config.validate();
  DirectoryLock lock(out);
  write_text_file(out / "config.json", config.to_json());
  const fs::path data = out / "data";
  const fs::path model = out / "model";
  stage("gen", [&] { cmd_gen(config, data, log); });
  stage("train", [&] { cmd_train(config, data, model, log); });
  stage("merge", [&] { cmd_merge(config, model, data, log); });
  stage("infer", [&] { cmd_infer(config, model, data, out / "predictions.json", log); });
  return stage("eval", [&] {
    return cmd_eval(config, model, data, config.infer.anchor, out / "eval", out / "predictions.json", log);
  });
}

std::string error_histogram_svg(const std::vector<double>& errors_deg) {
  constexpr int kBins = 18;
  constexpr double kW = 640, kH = 320, kLeft = 50, kBottom = 40, kTop = 20;
  std::vector<int> counts(kBins, 0);
  for (double e : errors_deg) counts[std::clamp(static_cast<int>(e / 10.0), 0, kBins - 1)]++;
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  const double bar_w = (kW - kLeft - 10) / kBins;
  const double plot_h = kH - kBottom - kTop;
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
    << kW << " " << kH << "\">\n"
    << "  <rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n"
    << "  <text x=\"" << kW / 2 << "\" y=\"14\" font-size=\"12\" text-anchor=\"middle\">pose error (degrees), "
    << errors_deg.size() << " images</text>\n";
  for (int b = 0; b < kBins; ++b) {
    const double h = plot_h * counts[b] / peak;
    const double x = kLeft + b * bar_w;
    s << "  <rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(kTop + plot_h - h, 1) << "\" width=\""
      << fixed(bar_w - 2, 1) << "\" height=\"" << fixed(h, 1) << "\" fill=\"#4a78b5\"/>\n";
    if (b % 3 == 0) {
      s << "  <text x=\"" << fixed(x, 1) << "\" y=\"" << kH - kBottom + 16 << "\" font-size=\"10\">" << b * 10
        << "</text>\n";
    }
  }
  s << "  <line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kW - 10 << "\" y2=\""
    << kTop + plot_h << "\" stroke=\"black\"/>\n"
    << "  <text x=\"10\" y=\"" << kTop + 10 << "\" font-size=\"10\">" << peak << "</text>\n"
    << "</svg>\n";
  return s.str();
}

std::string cmd_report(const fs::path& report, const std::optional<fs::path>& svg) {
  std::vector<double> errors;
  std::string digest;
  try {
    const json j = json::parse(read_text_file(report));
    digest = j.value("config_digest", std::string());
    const auto& per_image = j.at("per_image");
    if (!per_image.is_array()) throw Error(ErrorCode::kMalformedReport, "per_image must be an array");
    for (const auto& p : per_image) errors.push_back(p.at("error_deg").get<double>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedReport, report.string() + ": " + e.what());
  }
  if (errors.empty()) throw Error(ErrorCode::kMalformedReport, report.string() + ": report lists no images");
  for (double e : errors) {
    if (!std::isfinite(e) || e < 0.0) throw Error(ErrorCode::kMalformedReport, "error_deg must be finite and >= 0");
  }
  const MetricsReport m = metrics_from_errors(errors);
  char line[96];
  std::ostringstream table;
  std::snprintf(line, sizeof(line), "%-16s %12s\n", "metric", "value");
  table << line;
  std::snprintf(line, sizeof(line), "%-16s %12zu\n", "images", errors.size());
  table << line;
  std::snprintf(line, sizeof(line), "%-16s %12.1f\n", "median (deg)", m.median);
  table << line;
  std::snprintf(line, sizeof(line), "%-16s %11.1f%%\n", "acc30", 100.0 * m.acc30);
  table << line;
  std::snprintf(line, sizeof(line), "%-16s %11.1f%%\n", "acc10", 100.0 * m.acc10);
  table << line;
  if (!digest.empty()) {
    std::snprintf(line, sizeof(line), "%-16s %12s\n", "config", digest.c_str());
    table << line;
  }
  if (svg) write_text_file(*svg, error_histogram_svg(errors));
  return table.str();
}

}  // namespace nmpose
