#include "relnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace relnet {

void LandmarkSet::validate() const {
  for (const auto& p : points) {
    if (!p.allFinite()) throw std::invalid_argument("landmark point is not finite");
  }
  if (!boxes.empty()) {
    if (boxes.size() != points.size()) throw std::invalid_argument("landmark boxes not aligned with points");
    for (const auto& b : boxes) {
      if (!(b.w >= 0.0 && b.h >= 0.0)) throw std::invalid_argument("landmark box has negative size");
    }
  }
}

bool CurvePath::is_simple_path(std::size_t n) const {
  const std::size_t want_edges = n > 0 ? n - 1 : 0;
  if (edges.size() != want_edges) return false;
  if (order.size() != n) return false;
  std::vector<int> degree(n, 0);
  for (auto [i, j] : edges) {
    if (i >= n || j >= n || i == j) return false;
    if (++degree[i] > 2 || ++degree[j] > 2) return false;
  }
  // order must visit every vertex once and consecutive vertices must share an edge
  std::vector<bool> seen(n, false);
  for (auto v : order) {
    if (v >= n || seen[v]) return false;
    seen[v] = true;
  }
  auto has_edge = [&](std::size_t a, std::size_t b) {
    return std::any_of(edges.begin(), edges.end(), [&](const auto& e) {
      return (e.first == a && e.second == b) || (e.first == b && e.second == a);
    });
  };
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (!has_edge(order[k - 1], order[k])) return false;
  }
  // n-1 edges all traversed by a Hamiltonian walk: connected and acyclic
  return true;
}

namespace {

struct Candidate {
  double dist = std::numeric_limits<double>::infinity();
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::size_t endpoint = 0;
  std::size_t fresh = 0;

  [[nodiscard]] bool better_than(const Candidate& o) const {
    return std::tie(dist, lo, hi) < std::tie(o.dist, o.lo, o.hi);
  }
};

Candidate make_candidate(const std::vector<Point2>& pts, std::size_t endpoint, std::size_t fresh) {
  Candidate c;
  c.dist = (pts[endpoint] - pts[fresh]).norm();
  c.lo = std::min(endpoint, fresh);
  c.hi = std::max(endpoint, fresh);
  c.endpoint = endpoint;
  c.fresh = fresh;
  return c;
}

}  // namespace

CurvePath order_landmarks(const std::vector<Point2>& points) {
  const std::size_t n = points.size();
  CurvePath path;
  if (n == 0) return path;
  if (n == 1) {
    path.order = {0};
    return path;
  }

  Candidate seed;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      auto c = make_candidate(points, i, j);
      if (c.better_than(seed)) seed = c;
    }
  }
  std::vector<bool> used(n, false);
  used[seed.lo] = used[seed.hi] = true;
  path.edges.emplace_back(seed.lo, seed.hi);
  std::vector<std::size_t> chain = {seed.lo, seed.hi};  // head ... tail

  for (std::size_t added = 2; added < n; ++added) {
    Candidate best;
    for (std::size_t e : {chain.front(), chain.back()}) {
      for (std::size_t k = 0; k < n; ++k) {
        if (used[k]) continue;
        auto c = make_candidate(points, e, k);
        if (c.better_than(best)) best = c;
      }
    }
    used[best.fresh] = true;
    path.edges.emplace_back(best.lo, best.hi);
    if (best.endpoint == chain.front()) {
      chain.insert(chain.begin(), best.fresh);
    } else {
      chain.push_back(best.fresh);
    }
  }
  path.order = std::move(chain);
  return path;
}

std::vector<Point2> midpoints(const std::vector<Point2>& points, const CurvePath& path) {
  std::vector<Point2> mids;
  mids.reserve(path.edges.size());
  for (auto [i, j] : path.edges) mids.emplace_back(0.5 * (points.at(i) + points.at(j)));
  return mids;
}

std::vector<Point2> boundary_polyline(const std::vector<Detection>& detections, double conf_threshold) {
  if (!(conf_threshold >= 0.0 && conf_threshold <= 1.0)) {
    throw std::invalid_argument("boundary_polyline: confidence threshold must lie in [0,1]");
  }
  std::vector<Point2> centers;
  for (const auto& d : detections) {
    if (d.score >= conf_threshold) centers.emplace_back(d.cx, d.cy);
  }
  if (centers.size() < 2) return centers;
  const CurvePath path = order_landmarks(centers);
  std::vector<Point2> line;
  line.reserve(centers.size());
  for (auto idx : path.order) line.push_back(centers[idx]);
  return line;
}

}  // namespace relnet
