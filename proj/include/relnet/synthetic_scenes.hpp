#pragma once

#include "relnet/dataset.hpp"
#include "relnet/geometry.hpp"
#include "relnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

namespace relnet {

/// Procedural stand-in for an endoscopic view: dark marker dots along a
/// smooth open curve on textured tissue, optionally corrupted by bleeding
/// blobs, specular highlights and blur.
struct SceneConfig {
  int image_size = 128;
  int n_min = 4;
  int n_max = 8;
  int control_points = 5;
  double smoothness = 0.12;  // radial jitter of control points, fraction of the arc radius
  double radius_min = 3.0;   // dot radius range in pixels
  double radius_max = 5.0;
  double occlusion_frac = 0.0;
  int specular_count = 0;
  double blur_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;

  static SceneConfig easy() { return {}; }
  static SceneConfig hard();
};

struct SceneMeta {
  int n_occluded = 0;
  std::vector<bool> occluded;  // aligned with landmarks
  std::vector<double> dot_radius;
  int specular_count = 0;
  double blur_sigma = 0.0;
};

struct SceneSample {
  Image image;
  LandmarkSet landmarks;  // in curve order, occluded ones included
  SceneMeta meta;
};

/// Independent generator for sample `index` of a dataset seeded with `seed`.
std::mt19937_64 scene_rng(std::uint64_t seed, std::uint64_t index);

/// Throws std::runtime_error when 100 curve proposals are all rejected.
SceneSample generate_scene(const SceneConfig& cfg, std::mt19937_64& rng);

inline SceneSample generate_scene(const SceneConfig& cfg, std::uint64_t index) {
  auto rng = scene_rng(cfg.seed, index);
  return generate_scene(cfg, rng);
}

/// Writes OUT/images/NNNNNN.png, OUT/annotations.json and OUT/folds/fold_k.txt.
/// Image ids are 0..count-1; fold k holds the contiguous id block
/// [k*count/folds, (k+1)*count/folds).
std::vector<DatasetEntry> generate_dataset(const SceneConfig& cfg, int count, int folds,
                                           const std::filesystem::path& out_dir);

/// Separable Gaussian blur with clamped borders. sigma <= 0 is a no-op.
void gaussian_blur(Image& image, double sigma);

}  // namespace relnet
