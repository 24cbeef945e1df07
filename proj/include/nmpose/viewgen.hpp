#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nmpose/image.hpp"
#include "nmpose/raster.hpp"
#include "nmpose/so3.hpp"

namespace nmpose {

// Procedural object family standing in for one object category: every
// instance shares a template albedo field and shape field, plus its own
// seeded variation.
struct FamilyConfig {
  std::uint64_t family_seed = 1;
  int mesh_level = 2;
  double radius = 1.0;
  int albedo_blobs = 6;
  double instance_variation = 0.1;  // amplitude of the per-instance albedo field
  double shape_jitter = 0.1;         // max radial offset as a fraction of radius, <= 0.1
};

struct SyntheticObject {
  std::string instance_id;
  std::uint64_t seed = 0;
  PolyMesh shape;                  // jittered geometry in the category frame
  std::vector<Vec3> albedo;        // per vertex, each channel in [0, 1]
  Rotation canonical_offset;       // hidden rotation between instance and category frames
};

SyntheticObject make_synthetic_object(const FamilyConfig& family, std::uint64_t seed,
                                      const std::string& instance_id,
                                      const Rotation& canonical_offset = Rotation::identity());

struct NoiseConfig {
  double pose_sigma = 0.0;     // degrees of az/el jitter on the rendered (not labelled) pose
  double texture_sigma = 0.0;  // per-view albedo noise std
  double artifact_rate = 0.0;  // probability of a corrupted patch per view
  std::uint64_t seed = 0;

  void validate() const;
};

struct View {
  ViewSpec spec;
  Rotation label;  // pseudo pose label, lookat(spec)
  RgbImage image;
  Mask mask;
};

struct ImageSet {
  std::string instance_id;
  Camera camera;
  std::vector<View> views;
};

// What the generator actually did; only tests read it.
struct GenerationTruth {
  std::string instance_id;
  Rotation canonical_offset;
  std::vector<Rotation> true_poses;  // instance-frame pose each view was rendered at
};

struct GeneratedSet {
  ImageSet images;
  GenerationTruth truth;
};

// The 12 x 7 azimuth/elevation grid, az-major, theta = 0.
std::vector<ViewSpec> view_grid();

struct RenderedView {
  RgbImage image;
  Mask mask;
};

// Flat-shaded albedo render of the object at an instance-frame pose (the
// hidden canonical offset is applied on top). `albedo` overrides obj.albedo
// when non-empty.
RenderedView render_object(const SyntheticObject& obj, const Rotation& pose, const Camera& camera,
                           std::span<const Vec3> albedo = {});

// Surrogate for the view generator: one view per spec plus, when
// `include_base` is set, the unjittered base view labelled with the identity
// appended last.
GeneratedSet generate_image_set(const SyntheticObject& obj, std::span<const ViewSpec> grid,
                                const NoiseConfig& noise, const Camera& camera,
                                bool include_base = true);

struct LoadOptions {
  // Accepted view counts; empty accepts any non-zero count.
  std::vector<std::size_t> view_counts = {84, 85};
};

// Directory layout: manifest.json, views/NNN.png, masks/NNN.png.
void save_image_set(const ImageSet& set, const std::filesystem::path& dir);
ImageSet load_image_set(const std::filesystem::path& dir, const LoadOptions& options = {});

void save_generation_truth(const GenerationTruth& truth, const std::filesystem::path& path);
GenerationTruth load_generation_truth(const std::filesystem::path& path);

bool operator==(const View& a, const View& b);
bool operator==(const ImageSet& a, const ImageSet& b);

}  // namespace nmpose
