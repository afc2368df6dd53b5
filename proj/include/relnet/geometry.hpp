#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

namespace relnet {

/// Input-image pixel coordinates.
using Point2 = Eigen::Vector2d;

struct BoxSize {
  double w = 0.0;
  double h = 0.0;
  bool operator==(const BoxSize&) const = default;
};

/// Ground-truth landmarks of one image. When `boxes` is non-empty it is
/// aligned with `points`.
struct LandmarkSet {
  std::vector<Point2> points;
  std::vector<BoxSize> boxes;

  [[nodiscard]] std::size_t size() const { return points.size(); }
  [[nodiscard]] bool has_boxes() const { return !boxes.empty(); }
  /// Throws std::invalid_argument on non-finite points, misaligned or negative boxes.
  void validate() const;
};

/// A simple path over landmark indices.
struct CurvePath {
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // in insertion order
  std::vector<std::size_t> order;                          // traversal, end to end

  /// Checks edge count, degree <= 2, connectivity, acyclicity and that
  /// `order` walks the edges. `n` is the number of landmarks.
  [[nodiscard]] bool is_simple_path(std::size_t n) const;
};

struct Detection {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double score = 0.0;
};

/// Greedy curve construction: seed with the globally closest pair, then
/// repeatedly attach the unpaired point nearest to either path endpoint.
/// Equal distances resolve to the lexicographically smallest
/// (min index, max index) edge.
CurvePath order_landmarks(const std::vector<Point2>& points);
inline CurvePath order_landmarks(const LandmarkSet& landmarks) { return order_landmarks(landmarks.points); }

/// One midpoint per path edge, in edge order.
std::vector<Point2> midpoints(const std::vector<Point2>& points, const CurvePath& path);

/// Centers of detections scoring >= `conf_threshold`, in path order.
/// With fewer than two survivors the centers are returned as filtered.
std::vector<Point2> boundary_polyline(const std::vector<Detection>& detections, double conf_threshold = 0.2);

}  // namespace relnet
