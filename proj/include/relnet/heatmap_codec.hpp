#pragma once

#include "relnet/detector.hpp"
#include "relnet/geometry.hpp"
#include "relnet/tensor.hpp"

#include <vector>

namespace relnet {

/// Input size and prediction stride.
struct GridSpec {
  int input_w = 128;
  int input_h = 128;
  int downsample = 4;

  void validate() const;
  [[nodiscard]] int grid_w() const { return input_w / downsample; }
  [[nodiscard]] int grid_h() const { return input_h / downsample; }
};

/// Supervision on the downsampled grid.
struct TargetMaps {
  FeatureMap<float> y_map;     // 1 channel, landmark heatmap
  FeatureMap<float> s_map;     // 2 channels, (w, h) in input pixels at center cells
  FeatureMap<float> o_map;     // 2 channels, fractional offsets at center cells
  FeatureMap<float> r_map;     // 1 channel, relation heatmap
  FeatureMap<float> pos_mask;  // 1 channel, 1 at encoded center cells
  std::vector<Point2> encoded_centers;  // landmarks kept after cell collisions
  std::vector<Point2> relation_points;  // midpoints rendered into r_map
};

/// CornerNet rule: smallest of the three corner-shift radii keeping IoU >=
/// `min_iou`, floored at one cell.
double gaussian_radius(double box_w, double box_h, double min_iou = 0.7);

/// Max-composites exp(-(dx^2 + dy^2) / (2 sigma^2)), sigma = radius / 3, over a
/// (2 radius + 1)^2 window clipped to the map.
void render_gaussian(FeatureMap<float>& map, int cx, int cy, int radius);

/// Throws std::invalid_argument if a center lies outside [0,W) x [0,H) or boxes are missing.
TargetMaps encode_targets(const LandmarkSet& landmarks, const GridSpec& grid);

/// Peaks (>= all 8 neighbours) of y_hat, best `top_k` by score, ties in row-major order.
std::vector<Detection> decode(const FeatureMap<float>& y_hat, const FeatureMap<float>& s_hat,
                              const FeatureMap<float>& o_hat, const GridSpec& grid, int top_k = 20);

inline std::vector<Detection> decode(const NetworkOutput<float>& out, const GridSpec& grid, int top_k = 20) {
  return decode(out.y_hat, out.s_hat, out.o_hat, grid, top_k);
}

}  // namespace relnet
