#include "nmpose/neural_mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "nmpose/error.hpp"
#include "nmpose/io.hpp"
#include "nmpose/kernels.hpp"

namespace nmpose {

namespace {

void normalize_row(double* v, int dim) {
  const double n = std::sqrt(kernels::dot(v, v, dim));
  if (n <= kNormEpsilon) return;
  for (int c = 0; c < dim; ++c) v[c] /= n;
}

std::vector<double> random_unit_rows(std::size_t rows, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double* v = out.data() + r * dim;
    for (int c = 0; c < dim; ++c) v[c] = gauss(rng);
    normalize_row(v, dim);
  }
  return out;
}

// log sum exp over the entries of `s` whose flag is set.
double log_sum_exp(std::span<const double> s, const std::vector<std::uint8_t>& use) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (use[j]) mx = std::max(mx, s[j]);
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (use[j]) acc += std::exp(s[j] - mx);
  }
  return mx + std::log(acc);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

bool sample_in_bounds(const FeatureMap& map, const Vec2& p) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= map.width - 1 && p.y() <= map.height - 1;
}

struct ViewCache {
  VertexScreenData screen;
  std::vector<int> background;
};

ViewCache prepare_view(const PolyMesh& geometry, const View& view, const Camera& camera, double tau) {
  ViewCache c;
  const DepthMap depth = render_depth(geometry, view.label, camera);
  c.screen = compute_visibility(project_vertices(geometry, view.label, camera), depth, tau);
  c.background = background_pixels(view.mask, camera.stride, camera.feature_w(), camera.feature_h());
  return c;
}

struct AdamState {
  static constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  EncoderParams m, v;
  long t = 0;

  explicit AdamState(const EncoderParams& p) : m(EncoderParams::zeros(p.dim)), v(EncoderParams::zeros(p.dim)) {}

  void apply(EncoderParams& p, const EncoderParams& g, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(kB1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kB2, static_cast<double>(t));
    auto update = [&](std::vector<float>& w, const std::vector<float>& gw, std::vector<float>& mw,
                      std::vector<float>& vw) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        mw[i] = static_cast<float>(kB1 * mw[i] + (1.0 - kB1) * gw[i]);
        vw[i] = static_cast<float>(kB2 * vw[i] + (1.0 - kB2) * double(gw[i]) * gw[i]);
        w[i] -= static_cast<float>(lr * (mw[i] / c1) / (std::sqrt(vw[i] / c2) + kEps));
      }
    };
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      update(p.layers[l].weight, g.layers[l].weight, m.layers[l].weight, v.layers[l].weight);
      update(p.layers[l].bias, g.layers[l].bias, m.layers[l].bias, v.layers[l].bias);
    }
  }
};

}  // namespace

NeuralMesh NeuralMesh::random(const PolyMesh& geometry, int dim, std::uint64_t seed, std::string instance_id) {
  if (dim <= 0) throw Error(ErrorCode::kInvalidArgument, "feature dimension must be positive");
  NeuralMesh mesh;
  mesh.instance_id = std::move(instance_id);
  mesh.geometry = geometry;
  mesh.dim = dim;
  mesh.features = random_unit_rows(geometry.vertices.size(), dim, seed);
  return mesh;
}

BackgroundBank BackgroundBank::random(int count, int dim, std::uint64_t seed) {
  if (dim <= 0 || count < 0) throw Error(ErrorCode::kInvalidArgument, "bad background bank shape");
  BackgroundBank bank;
  bank.dim = dim;
  bank.entries = random_unit_rows(static_cast<std::size_t>(count), dim, seed);
  return bank;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, what); };
  if (dim <= 0) fail("dim must be positive");
  if (mesh_level < 0 || mesh_level > kMaxPolyhedronLevel) fail("mesh_level must lie in [0, 4]");
  if (!(radius > 0.0)) fail("radius must be positive");
  if (!(beta >= 0.0 && beta < 1.0)) fail("beta must lie in [0, 1)");
  if (!(kappa > 0.0)) fail("kappa must be positive");
  if (std::isnan(rho)) fail("rho must be a number");
  if (std::isnan(tau_r)) fail("tau_r must be a number");
  if (epochs < 0) fail("epochs must be non-negative");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be non-negative");
  if (bank_size < 0) fail("bank_size must be non-negative");
}

void momentum_update(NeuralMesh& mesh, std::span<const double> samples, std::span<const std::uint8_t> visible,
                     double beta) {
  const int d = mesh.dim;
  if (samples.size() != mesh.features.size() || visible.size() != mesh.size()) {
    throw Error(ErrorCode::kShape, "momentum update shapes do not match the mesh");
  }
  for (std::size_t k = 0; k < mesh.size(); ++k) {
    if (!visible[k]) continue;
    double* theta = mesh.feature(k);
    const double* f = samples.data() + k * d;
    for (int c = 0; c < d; ++c) theta[c] = (1.0 - beta) * f[c] + beta * theta[c];
    normalize_row(theta, d);
  }
}

std::vector<std::vector<int>> vertex_neighbourhoods(const PolyMesh& geometry, double rho) {
  const auto& v = geometry.vertices;
  std::vector<std::vector<int>> out(v.size());
  for (std::size_t a = 0; a < v.size(); ++a) {
    const Vec3 ua = v[a].normalized();
    for (std::size_t b = 0; b < v.size(); ++b) {
      const double c = std::clamp(ua.dot(v[b].normalized()), -1.0, 1.0);
      if (geometry.radius * std::acos(c) <= rho || a == b) out[a].push_back(static_cast<int>(b));
    }
  }
  return out;
}

LossResult foreground_loss(const FeatureMap& map, const VertexScreenData& screen, const NeuralMesh& mesh,
                           const BackgroundBank& bg, double kappa,
                           const std::vector<std::vector<int>>& neighbourhoods) {
  const int d = mesh.dim;
  if (map.channels != d || (bg.size() > 0 && bg.dim != d)) {
    throw Error(ErrorCode::kShape, "feature dimensions disagree");
  }
  const std::size_t k_count = mesh.size();
  const std::size_t n = k_count + bg.size();
  LossResult out;
  out.gradient = FeatureMap(map.channels, map.height, map.width);

  std::vector<double> s(n), grad(d);
  std::vector<std::uint8_t> use(n);
  for (std::size_t k = 0; k < k_count; ++k) {
    if (!screen.visible[k] || !sample_in_bounds(map, screen.pixel[k])) continue;
    const std::vector<double> f = sample_feature(map, screen.pixel[k]);
    for (std::size_t j = 0; j < k_count; ++j) s[j] = kappa * kernels::dot(f.data(), mesh.feature(j), d);
    for (std::size_t b = 0; b < bg.size(); ++b) s[k_count + b] = kappa * kernels::dot(f.data(), bg.entry(b), d);
    std::fill(use.begin(), use.end(), 1);
    for (int j : neighbourhoods[k]) use[j] = 0;
    use[k] = 1;
    const double lse = log_sum_exp(s, use);
    out.loss += lse - s[k];
    ++out.terms;

    // d/df = kappa * (sum_j p_j c_j - theta_k)
    std::fill(grad.begin(), grad.end(), 0.0);
    kernels::axpy(-kappa, mesh.feature(k), grad.data(), d);
    for (std::size_t j = 0; j < n; ++j) {
      if (!use[j]) continue;
      const double p = std::exp(s[j] - lse);
      const double* c = j < k_count ? mesh.feature(j) : bg.entry(j - k_count);
      kernels::axpy(kappa * p, c, grad.data(), d);
    }
    sample_feature_backward(map, screen.pixel[k], grad, out.gradient);
  }
  return out;
}

std::vector<int> background_pixels(const Mask& mask, int stride, int map_w, int map_h) {
  std::vector<int> out;
  for (int y = 0; y < map_h; ++y) {
    for (int x = 0; x < map_w; ++x) {
      bool any = false;
      for (int yy = y * stride; yy < (y + 1) * stride && !any; ++yy) {
        for (int xx = x * stride; xx < (x + 1) * stride; ++xx) {
          if (yy < mask.height && xx < mask.width && mask.at(xx, yy)) {
            any = true;
            break;
          }
        }
      }
      if (!any) out.push_back(y * map_w + x);
    }
  }
  return out;
}

BackgroundLoss background_loss(const FeatureMap& map, std::span<const int> background, const BackgroundBank& bg,
                               const NeuralMesh& mesh, double kappa, std::mt19937_64* rng) {
  const int d = map.channels;
  BackgroundLoss out;
  out.gradient = FeatureMap(map.channels, map.height, map.width);
  if (background.empty() || bg.size() == 0) return out;
  if (bg.dim != d || mesh.dim != d) throw Error(ErrorCode::kShape, "feature dimensions disagree");

  out.pixels.assign(background.begin(), background.end());
  if (out.pixels.size() > bg.size()) {
    std::vector<int> picked;
    if (rng) {
      std::sample(out.pixels.begin(), out.pixels.end(), std::back_inserter(picked), bg.size(), *rng);
    } else {
      picked.assign(out.pixels.begin(), out.pixels.begin() + static_cast<std::ptrdiff_t>(bg.size()));
    }
    out.pixels = std::move(picked);
  }

  const std::size_t k_count = mesh.size();
  std::vector<double> s(k_count + 1), grad(d);
  for (int idx : out.pixels) {
    const double* f = map.data.data() + static_cast<std::size_t>(idx) * d;
    std::size_t best = 0;
    double best_dot = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < bg.size(); ++b) {
      const double v = kernels::dot(f, bg.entry(b), d);
      if (v > best_dot) {
        best_dot = v;
        best = b;
      }
    }
    out.assignment.push_back(static_cast<int>(best));
    s[0] = kappa * best_dot;
    for (std::size_t k = 0; k < k_count; ++k) s[k + 1] = kappa * kernels::dot(f, mesh.feature(k), d);
    const double mx = *std::max_element(s.begin(), s.end());
    double acc = 0.0;
    for (double v : s) acc += std::exp(v - mx);
    const double lse = mx + std::log(acc);
    out.loss += lse - s[0];
    ++out.terms;

    std::fill(grad.begin(), grad.end(), 0.0);
    kernels::axpy(kappa * (std::exp(s[0] - lse) - 1.0), bg.entry(best), grad.data(), d);
    for (std::size_t k = 0; k < k_count; ++k) {
      kernels::axpy(kappa * std::exp(s[k + 1] - lse), mesh.feature(k), grad.data(), d);
    }
    kernels::axpy(1.0, grad.data(), out.gradient.data.data() + static_cast<std::size_t>(idx) * d, d);
  }
  return out;
}

void update_background_bank(BackgroundBank& bg, const FeatureMap& map, const BackgroundLoss& assigned, double beta) {
  const int d = bg.dim;
  std::vector<double> sums(bg.entries.size(), 0.0);
  std::vector<int> counts(bg.size(), 0);
  for (std::size_t i = 0; i < assigned.pixels.size(); ++i) {
    const int b = assigned.assignment[i];
    kernels::axpy(1.0, map.data.data() + static_cast<std::size_t>(assigned.pixels[i]) * d,
                  sums.data() + static_cast<std::size_t>(b) * d, d);
    ++counts[b];
  }
  for (std::size_t b = 0; b < bg.size(); ++b) {
    if (counts[b] == 0) continue;
    double* mean = sums.data() + b * d;
    normalize_row(mean, d);
    double* e = bg.entry(b);
    for (int c = 0; c < d; ++c) e[c] = (1.0 - beta) * mean[c] + beta * e[c];
    normalize_row(e, d);
  }
}

TrainResult train(std::span<const ImageSet> instances, const TrainConfig& config, const TrainLogger& log,
                  const TrainResult* warm_start) {
  config.validate();
  if (instances.empty()) throw Error(ErrorCode::kConfig, "training needs at least one image set");
  const Camera camera = instances.front().camera;
  for (const auto& set : instances) {
    if (!(set.camera == camera)) {
      throw Error(ErrorCode::kConfig, "image set " + set.instance_id + " uses a different camera");
    }
  }
  camera.validate_for_radius(config.radius);

  const PolyMesh geometry = build_geodesic_polyhedron(config.mesh_level, config.radius);
  TrainResult result;
  if (warm_start) {
    if (warm_start->meshes.size() != instances.size() || warm_start->encoder.dim != config.dim ||
        warm_start->bank.dim != config.dim) {
      throw Error(ErrorCode::kConfig, "warm start does not match the training setup");
    }
    result.encoder = warm_start->encoder;
    result.meshes = warm_start->meshes;
    result.bank = warm_start->bank;
    for (const auto& m : result.meshes) {
      if (m.size() != geometry.vertices.size() || m.dim != config.dim) {
        throw Error(ErrorCode::kConfig, "warm start mesh does not match the configured geometry");
      }
    }
  } else {
    result.encoder = EncoderParams::init(derive_seed(config.seed, 1), config.dim);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      result.meshes.push_back(
          NeuralMesh::random(geometry, config.dim, derive_seed(config.seed, 100 + i), instances[i].instance_id));
    }
    result.bank = BackgroundBank::random(config.bank_size, config.dim, derive_seed(config.seed, 2));
  }
  const auto neighbourhoods = vertex_neighbourhoods(geometry, config.neighbourhood_radius());

  std::vector<std::pair<int, int>> order;
  std::vector<std::vector<ViewCache>> cache(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (std::size_t v = 0; v < instances[i].views.size(); ++v) {
      order.emplace_back(static_cast<int>(i), static_cast<int>(v));
      cache[i].push_back(prepare_view(geometry, instances[i].views[v], camera, config.visibility_threshold()));
    }
  }

  std::mt19937_64 shuffle_rng(derive_seed(config.seed, 3));
  std::mt19937_64 sample_rng(derive_seed(config.seed, 4));
  const double total_steps = static_cast<double>(config.epochs) * order.size();
  std::size_t step = 0;
  const std::size_t k_count = geometry.vertices.size();
  std::vector<double> samples(k_count * config.dim);
  EncoderTape<float> tape;
  AdamState adam(result.encoder);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochStats stats;
    for (const auto& [i, v] : order) {
      const double lr = config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * step / total_steps));
      ++step;
      const View& view = instances[i].views[v];
      const ViewCache& vc = cache[i][v];
      NeuralMesh& mesh = result.meshes[i];

      const FeatureMap map = encode(result.encoder, view.image, &tape);
      LossResult fg = foreground_loss(map, vc.screen, mesh, result.bank, config.kappa, neighbourhoods);
      if (fg.terms == 0) {
        ++stats.skipped;
        continue;
      }
      BackgroundLoss bg = background_loss(map, vc.background, result.bank, mesh, config.kappa, &sample_rng);

      // Mean over terms keeps the step size independent of how many vertices are visible.
      FeatureMap grad = std::move(fg.gradient);
      for (double& g : grad.data) g /= fg.terms;
      if (bg.terms > 0) kernels::axpy(1.0 / bg.terms, bg.gradient.data.data(), grad.data.data(), grad.data.size());
      EncoderParams g = encode_backward(result.encoder, tape, grad);
      if (config.adam) {
        adam.apply(result.encoder, g, lr);
      } else {
        result.encoder.add_scaled(g, static_cast<float>(-lr));
      }

      std::vector<std::uint8_t> hit(k_count, 0);
      for (std::size_t k = 0; k < k_count; ++k) {
        if (!vc.screen.visible[k] || !sample_in_bounds(map, vc.screen.pixel[k])) continue;
        const auto f = sample_feature(map, vc.screen.pixel[k]);
        std::copy(f.begin(), f.end(), samples.begin() + static_cast<std::ptrdiff_t>(k * config.dim));
        hit[k] = 1;
      }
      momentum_update(mesh, samples, hit, config.beta);
      update_background_bank(result.bank, map, bg, config.beta);

      stats.mean_foreground += fg.loss / fg.terms;
      stats.mean_background += bg.terms > 0 ? bg.loss / bg.terms : 0.0;
      ++stats.views;
    }
    if (stats.views > 0) {
      stats.mean_foreground /= stats.views;
      stats.mean_background /= stats.views;
    }
    result.history.push_back(stats);
    if (log) log(epoch, stats);
  }
  return result;
}

double mean_vertex_alignment(const EncoderParams& encoder, const ImageSet& set, const NeuralMesh& mesh,
                             const TrainConfig& config) {
  double total = 0.0;
  std::size_t count = 0;
  for (const View& view : set.views) {
    const ViewCache vc = prepare_view(mesh.geometry, view, set.camera, config.visibility_threshold());
    const FeatureMap map = encode(encoder, view.image);
    for (std::size_t k = 0; k < mesh.size(); ++k) {
      if (!vc.screen.visible[k] || !sample_in_bounds(map, vc.screen.pixel[k])) continue;
      const auto f = sample_feature(map, vc.screen.pixel[k]);
      total += kernels::dot(f.data(), mesh.feature(k), mesh.dim);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / count;
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

void write_rows(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t dim,
                const std::vector<double>& values) {
  BinaryWriter out(path);
  out.bytes("NMBK", 4);
  out.u32(rows);
  out.u32(dim);
  std::vector<float> f(values.begin(), values.end());
  out.f32s(f);
  out.close();
}

std::vector<double> read_rows(const std::filesystem::path& path, std::uint32_t& rows, std::uint32_t& dim) {
  BinaryReader in(path);
  char magic[4];
  in.bytes(magic, 4);
  if (std::string_view(magic, 4) != "NMBK") throw Error(ErrorCode::kIo, path.string() + ": not a feature bank");
  rows = in.u32();
  dim = in.u32();
  if (dim == 0 || dim > 4096 || rows > (1u << 22)) throw Error(ErrorCode::kIo, path.string() + ": bad bank shape");
  const auto f = in.f32s(static_cast<std::size_t>(rows) * dim);
  std::vector<double> out(f.begin(), f.end());
  for (std::size_t r = 0; r < rows; ++r) normalize_row(out.data() + r * dim, static_cast<int>(dim));
  return out;
}

}  // namespace

void save_neural_mesh(const std::filesystem::path& path, const NeuralMesh& mesh) {
  write_rows(path, static_cast<std::uint32_t>(mesh.size()), static_cast<std::uint32_t>(mesh.dim), mesh.features);
  const nlohmann::json meta{{"instance_id", mesh.instance_id},
                            {"level", mesh.geometry.level},
                            {"radius", mesh.geometry.radius}};
  write_text_file(sidecar(path), meta.dump(2));
}

NeuralMesh load_neural_mesh(const std::filesystem::path& path) {
  std::uint32_t rows = 0, dim = 0;
  NeuralMesh mesh;
  mesh.features = read_rows(path, rows, dim);
  mesh.dim = static_cast<int>(dim);
  try {
    const auto meta = nlohmann::json::parse(read_text_file(sidecar(path)));
    mesh.instance_id = meta.at("instance_id").get<std::string>();
    mesh.geometry = build_geodesic_polyhedron(meta.at("level").get<int>(), meta.at("radius").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, sidecar(path).string() + ": " + e.what());
  }
  if (mesh.geometry.vertices.size() != rows) {
    throw Error(ErrorCode::kIo, path.string() + ": vertex count does not match the geometry");
  }
  return mesh;
}

void save_background_bank(const std::filesystem::path& path, const BackgroundBank& bank) {
  write_rows(path, static_cast<std::uint32_t>(bank.size()), static_cast<std::uint32_t>(bank.dim), bank.entries);
}

BackgroundBank load_background_bank(const std::filesystem::path& path) {
  std::uint32_t rows = 0, dim = 0;
  BackgroundBank bank;
  bank.entries = read_rows(path, rows, dim);
  bank.dim = static_cast<int>(dim);
  return bank;
}

}  // namespace nmpose
