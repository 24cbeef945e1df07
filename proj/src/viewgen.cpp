#include "nmpose/viewgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "json_util.hpp"
#include "nmpose/error.hpp"
#include "nmpose/io.hpp"

namespace nmpose {

namespace {

using detail::json;

// Smooth random field on the unit sphere: a sum of a few oriented sinusoids.
struct SphereField {
  struct Wave {
    Vec3 direction;
    double frequency;
    double phase;
    Vec3 amplitude;
  };
  std::vector<Wave> waves;

  static SphereField random(std::mt19937_64& rng, int count, double max_frequency) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SphereField field;
    for (int i = 0; i < count; ++i) {
      Wave w;
      w.direction = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
      w.frequency = 1.0 + (max_frequency - 1.0) * unit(rng);
      w.phase = 2.0 * std::numbers::pi * unit(rng);
      w.amplitude = Vec3(2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0);
      field.waves.push_back(w);
    }
    // Scale so every channel stays within [-1, 1].
    Vec3 total = Vec3::Zero();
    for (const auto& w : field.waves) total += w.amplitude.cwiseAbs();
    for (auto& w : field.waves) w.amplitude = w.amplitude.cwiseQuotient(total.cwiseMax(1e-12));
    return field;
  }

  Vec3 operator()(const Vec3& u) const {
    Vec3 out = Vec3::Zero();
    for (const auto& w : waves) out += w.amplitude * std::sin(w.frequency * w.direction.dot(u) + w.phase);
    return out;
  }
};

struct AlbedoTemplate {
  Vec3 base;
  std::vector<Vec3> blob_dirs;
  std::vector<Vec3> blob_colors;
  std::vector<double> blob_widths;
  SphereField detail;

  static AlbedoTemplate make(std::mt19937_64& rng, int blobs) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    AlbedoTemplate t;
    t.base = Vec3(0.3 + 0.4 * unit(rng), 0.3 + 0.4 * unit(rng), 0.3 + 0.4 * unit(rng));
    for (int i = 0; i < blobs; ++i) {
      t.blob_dirs.push_back(Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized());
      t.blob_colors.push_back(Vec3(unit(rng), unit(rng), unit(rng)));
      t.blob_widths.push_back(0.35 + 0.25 * unit(rng));
    }
    t.detail = SphereField::random(rng, 8, 4.0);
    return t;
  }

  Vec3 operator()(const Vec3& u) const {
    Vec3 c = base;
    for (std::size_t i = 0; i < blob_dirs.size(); ++i) {
      const double angle = std::acos(std::clamp(u.dot(blob_dirs[i]), -1.0, 1.0));
      const double w = std::exp(-0.5 * (angle * angle) / (blob_widths[i] * blob_widths[i]));
      c += w * (blob_colors[i] - c);
    }
    return c + 0.15 * detail(u);
  }
};

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

double wrap_degrees(double a) {
  while (a > 180.0) a -= 360.0;
  while (a < -180.0) a += 360.0;
  return a;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

constexpr double kAmbient = 0.6;
constexpr double kDiffuse = 0.4;

}  // namespace

SyntheticObject make_synthetic_object(const FamilyConfig& family, std::uint64_t seed,
                                      const std::string& instance_id, const Rotation& canonical_offset) {
  if (family.shape_jitter < 0.0 || family.shape_jitter > 0.1) {
    throw Error(ErrorCode::kInvalidArgument, "shape jitter must lie in [0, 0.1]");
  }
  auto family_rng = seeded({family.family_seed, 0x5eedULL});
  const AlbedoTemplate albedo_template = AlbedoTemplate::make(family_rng, family.albedo_blobs);
  const SphereField shape_template = SphereField::random(family_rng, 6, 3.0);

  auto rng = seeded({family.family_seed, seed});
  const SphereField albedo_variation = SphereField::random(rng, 8, 4.0);
  const SphereField shape_variation = SphereField::random(rng, 6, 3.0);

  SyntheticObject obj;
  obj.instance_id = instance_id;
  obj.seed = seed;
  obj.canonical_offset = canonical_offset;
  obj.shape = build_geodesic_polyhedron(family.mesh_level, family.radius);
  obj.albedo.reserve(obj.shape.vertices.size());
  for (auto& v : obj.shape.vertices) {
    const Vec3 u = v.normalized();
    const Vec3 c = albedo_template(u) + family.instance_variation * albedo_variation(u);
    obj.albedo.push_back(c.cwiseMax(0.02).cwiseMin(0.98));
    const double radial = 0.6 * shape_template(u).x() + 0.4 * shape_variation(u).x();
    v = u * family.radius * (1.0 + family.shape_jitter * radial);
  }
  return obj;
}

void NoiseConfig::validate() const {
  if (!(pose_sigma >= 0.0) || !(texture_sigma >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "noise sigmas must be non-negative");
  }
  if (!(artifact_rate >= 0.0 && artifact_rate <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "artifact rate must lie in [0, 1]");
  }
}

std::vector<ViewSpec> view_grid() {
  static constexpr double kAz[] = {0, 15, -15, 30, -30, 45, -45, 60, -60, 90, -90, 180};
  static constexpr double kEl[] = {0, 15, -15, 30, -30, 45, -45};
  std::vector<ViewSpec> grid;
  grid.reserve(84);
  for (double az : kAz) {
    for (double el : kEl) grid.push_back({az, el, 0.0});
  }
  return grid;
}

RenderedView render_object(const SyntheticObject& obj, const Rotation& pose, const Camera& camera,
                           std::span<const Vec3> albedo) {
  if (albedo.empty()) albedo = obj.albedo;
  const Rotation full = pose * obj.canonical_offset;
  const FragmentBuffer buf = rasterize(obj.shape.vertices, obj.shape.faces, full, camera, 1);

  // Flat shading from a headlight: one normal per face, in camera space.
  std::vector<double> shade(obj.shape.faces.size());
  for (std::size_t f = 0; f < obj.shape.faces.size(); ++f) {
    const auto& [a, b, c] = obj.shape.faces[f];
    Vec3 pa = full * obj.shape.vertices[a];
    Vec3 pb = full * obj.shape.vertices[b];
    Vec3 pc = full * obj.shape.vertices[c];
    const Vec3 normal = (pb - pa).cross(pc - pa).normalized();
    Vec3 centroid = (pa + pb + pc) / 3.0;
    centroid.z() += camera.distance;
    const double lambert = std::max(0.0, normal.dot(-centroid.normalized()));
    shade[f] = kAmbient + kDiffuse * lambert;
  }

  RenderedView out{RgbImage(buf.width, buf.height, 255), Mask(buf.width, buf.height)};
  for (int y = 0; y < buf.height; ++y) {
    for (int x = 0; x < buf.width; ++x) {
      const Fragment& frag = buf.at(x, y);
      if (frag.face < 0) continue;
      const auto& face = obj.shape.faces[frag.face];
      Vec3 color = Vec3::Zero();
      for (int i = 0; i < 3; ++i) color += frag.weights[i] * albedo[face[i]];
      color *= shade[frag.face];
      std::uint8_t* px = out.image.at(x, y);
      px[0] = to_byte(color.x());
      px[1] = to_byte(color.y());
      px[2] = to_byte(color.z());
      out.mask.values[static_cast<std::size_t>(y) * buf.width + x] = 1;
    }
  }
  return out;
}

GeneratedSet generate_image_set(const SyntheticObject& obj, std::span<const ViewSpec> grid,
                                const NoiseConfig& noise, const Camera& camera, bool include_base) {
  noise.validate();
  camera.validate();
  auto rng = seeded({noise.seed, obj.seed, 0x71e3ULL});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  GeneratedSet out;
  out.images.instance_id = obj.instance_id;
  out.images.camera = camera;
  out.truth.instance_id = obj.instance_id;
  out.truth.canonical_offset = obj.canonical_offset;

  std::vector<Vec3> albedo(obj.albedo.size());
  for (const ViewSpec& spec : grid) {
    // Draw every random number unconditionally so the stream does not depend on the config.
    const double jitter_az = gauss(rng) * noise.pose_sigma;
    const double jitter_el = gauss(rng) * noise.pose_sigma;
    ViewSpec actual = spec;
    actual.az = wrap_degrees(spec.az + jitter_az);
    actual.el = std::clamp(spec.el + jitter_el, -89.0, 89.0);
    const Rotation true_pose = lookat(actual);

    for (std::size_t i = 0; i < albedo.size(); ++i) {
      Vec3 n(gauss(rng), gauss(rng), gauss(rng));
      albedo[i] = (obj.albedo[i] + noise.texture_sigma * n).cwiseMax(0.0).cwiseMin(1.0);
    }
    RenderedView rendered = render_object(obj, true_pose, camera, albedo);

    const double artifact_draw = unit(rng);
    const double size_u = unit(rng), size_v = unit(rng), pos_u = unit(rng), pos_v = unit(rng);
    const std::uint64_t patch_seed = rng();
    if (artifact_draw < noise.artifact_rate) {
      // Corrupted patch centred somewhere over the object's bounding box.
      int bx0 = camera.image_w, by0 = camera.image_h, bx1 = -1, by1 = -1;
      for (int y = 0; y < camera.image_h; ++y) {
        for (int x = 0; x < camera.image_w; ++x) {
          if (!rendered.mask.at(x, y)) continue;
          bx0 = std::min(bx0, x);
          bx1 = std::max(bx1, x);
          by0 = std::min(by0, y);
          by1 = std::max(by1, y);
        }
      }
      if (bx1 >= 0) {
        const int w = static_cast<int>((0.15 + 0.2 * size_u) * camera.image_w);
        const int h = static_cast<int>((0.15 + 0.2 * size_v) * camera.image_h);
        const int cx = bx0 + static_cast<int>(pos_u * (bx1 - bx0));
        const int cy = by0 + static_cast<int>(pos_v * (by1 - by0));
        std::mt19937_64 patch_rng(patch_seed);
        std::uniform_int_distribution<int> byte(0, 255);
        for (int y = std::max(0, cy - h / 2); y < std::min(camera.image_h, cy + h / 2); ++y) {
          for (int x = std::max(0, cx - w / 2); x < std::min(camera.image_w, cx + w / 2); ++x) {
            std::uint8_t* px = rendered.image.at(x, y);
            for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(byte(patch_rng));
          }
        }
      }
    }

    out.images.views.push_back({spec, lookat(spec), std::move(rendered.image), std::move(rendered.mask)});
    out.truth.true_poses.push_back(true_pose);
  }

  if (include_base) {
    RenderedView base = render_object(obj, Rotation::identity(), camera);
    out.images.views.push_back({ViewSpec{}, Rotation::identity(), std::move(base.image), std::move(base.mask)});
    out.truth.true_poses.push_back(Rotation::identity());
  }
  return out;
}

namespace {

std::string numbered(const char* dir, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s/%03zu.png", dir, i);
  return buf;
}

}  // namespace

void save_image_set(const ImageSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "views");
  std::filesystem::create_directories(dir / "masks");
  json views = json::array();
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    const View& v = set.views[i];
    const std::string image = numbered("views", i);
    const std::string mask = numbered("masks", i);
    write_png(dir / image, v.image);
    write_png(dir / mask, v.mask);
    views.push_back({{"az", v.spec.az}, {"el", v.spec.el}, {"theta", v.spec.theta},
                     {"pose", detail::to_json(v.label)}, {"image", image}, {"mask", mask}});
  }
  const json manifest{{"instance_id", set.instance_id},
                      {"camera", detail::to_json(set.camera)},
                      {"views", views}};
  write_text_file(dir / "manifest.json", manifest.dump(2));
}

ImageSet load_image_set(const std::filesystem::path& dir, const LoadOptions& options) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw Error(ErrorCode::kMissingFile, "missing manifest " + manifest_path.string());
  }
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, manifest_path.string() + ": " + e.what());
  }

  ImageSet set;
  std::vector<std::pair<std::string, std::string>> files;
  try {
    set.instance_id = manifest.at("instance_id").get<std::string>();
    set.camera = detail::camera_from_json(manifest.at("camera"));
    const auto& views = manifest.at("views");
    if (!views.is_array()) throw Error(ErrorCode::kMalformedManifest, "views must be an array");
    const std::size_t count = views.size();
    const auto& allowed = options.view_counts;
    if (count == 0 || (!allowed.empty() && std::find(allowed.begin(), allowed.end(), count) == allowed.end())) {
      throw Error(ErrorCode::kViewCount, "manifest " + manifest_path.string() + " lists " +
                                             std::to_string(count) + " views");
    }
    for (const auto& v : views) {
      View view;
      view.spec = {v.at("az").get<double>(), v.at("el").get<double>(), v.at("theta").get<double>()};
      const auto& pose = v.at("pose");
      if (!pose.is_array() || pose.size() != 9) {
        throw Error(ErrorCode::kMalformedManifest, "pose must be an array of 9 reals");
      }
      view.label = detail::rotation_from_json(pose);
      set.views.push_back(std::move(view));
      files.emplace_back(v.at("image").get<std::string>(), v.at("mask").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, manifest_path.string() + ": " + e.what());
  }

  try {
    set.camera.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kMalformedManifest, e.what());
  }

  for (std::size_t i = 0; i < set.views.size(); ++i) {
    View& view = set.views[i];
    const Rotation expected = lookat(view.spec);
    if ((expected.matrix() - view.label.matrix()).norm() > 1e-9) {
      throw Error(ErrorCode::kInvalidRotation,
                  "view " + std::to_string(i) + " pose label does not match its view spec");
    }
    const auto image_path = dir / files[i].first;
    const auto mask_path = dir / files[i].second;
    if (!std::filesystem::exists(image_path)) throw Error(ErrorCode::kMissingFile, "missing " + image_path.string());
    if (!std::filesystem::exists(mask_path)) throw Error(ErrorCode::kMissingFile, "missing " + mask_path.string());
    view.image = read_png_rgb(image_path);
    view.mask = read_png_mask(mask_path);
    if (view.image.width != set.camera.image_w || view.image.height != set.camera.image_h ||
        view.mask.width != set.camera.image_w || view.mask.height != set.camera.image_h) {
      throw Error(ErrorCode::kMalformedManifest, "view " + std::to_string(i) + " size does not match the camera");
    }
    const double coverage = view.mask.coverage();
    if (coverage < 0.01 || coverage > 0.90) {
      throw Error(ErrorCode::kMaskCoverage, "view " + std::to_string(i) + " mask covers " +
                                                std::to_string(coverage * 100.0) + "% of the image");
    }
  }
  return set;
}

void save_generation_truth(const GenerationTruth& truth, const std::filesystem::path& path) {
  json poses = json::array();
  for (const auto& p : truth.true_poses) poses.push_back(detail::to_json(p));
  const json j{{"instance_id", truth.instance_id},
               {"canonical_offset", detail::to_json(truth.canonical_offset)},
               {"true_poses", poses}};
  write_text_file(path, j.dump(2));
}

GenerationTruth load_generation_truth(const std::filesystem::path& path) {
  GenerationTruth truth;
  try {
    const json j = json::parse(read_text_file(path));
    truth.instance_id = j.at("instance_id").get<std::string>();
    truth.canonical_offset = detail::rotation_from_json(j.at("canonical_offset"));
    for (const auto& p : j.at("true_poses")) truth.true_poses.push_back(detail::rotation_from_json(p));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, path.string() + ": " + e.what());
  }
  return truth;
}

bool operator==(const View& a, const View& b) {
  return a.spec == b.spec && a.label.matrix() == b.label.matrix() && a.image == b.image && a.mask == b.mask;
}

bool operator==(const ImageSet& a, const ImageSet& b) {
  return a.instance_id == b.instance_id && a.camera == b.camera && a.views == b.views;
}

}  // namespace nmpose
