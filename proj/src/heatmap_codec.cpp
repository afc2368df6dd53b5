#include "relnet/heatmap_codec.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

namespace relnet {

void GridSpec::validate() const {
  if (downsample < 1) throw std::invalid_argument("grid: downsample must be >= 1");
  if (input_w <= 0 || input_h <= 0) throw std::invalid_argument("grid: input size must be positive");
  if (input_w % downsample != 0 || input_h % downsample != 0) {
    throw std::invalid_argument("grid: input " + std::to_string(input_w) + "x" + std::to_string(input_h) +
                                " not divisible by downsample " + std::to_string(downsample));
  }
}

double gaussian_radius(double box_w, double box_h, double min_iou) {
  if (!(min_iou > 0.0 && min_iou < 1.0)) throw std::invalid_argument("gaussian_radius: min_iou must lie in (0,1)");
  const double w = std::max(box_w, 0.0);
  const double h = std::max(box_h, 0.0);
  const double o = min_iou;
  const double area = w * h;  // shared so that swapping w and h is bitwise symmetric

  // Smallest non-negative root of a r^2 + b r + c = 0 for each corner-shift case.
  auto smaller_root = [](double a, double b, double c) {
    const double disc = std::max(b * b - 4.0 * a * c, 0.0);
    return (-b - std::sqrt(disc)) / (2.0 * a);
  };
  auto larger_root = [](double a, double b, double c) {
    const double disc = std::max(b * b - 4.0 * a * c, 0.0);
    return (-b + std::sqrt(disc)) / (2.0 * a);
  };
  // one corner in, one out: (w-r)(h-r) / (2wh - (w-r)(h-r)) = o
  const double r1 = smaller_root(1.0, -(w + h), area * (1.0 - o) / (1.0 + o));
  // both corners in: (w-2r)(h-2r) / wh = o
  const double r2 = smaller_root(4.0, -2.0 * (w + h), (1.0 - o) * area);
  // both corners out: wh / ((w+2r)(h+2r)) = o
  const double r3 = larger_root(4.0 * o, 2.0 * o * (w + h), (o - 1.0) * area);
  return std::max(1.0, std::min({r1, r2, r3}));
}

void render_gaussian(FeatureMap<float>& map, int cx, int cy, int radius) {
  if (cx < 0 || cy < 0 || cx >= map.width || cy >= map.height) {
    throw std::invalid_argument("render_gaussian: center outside grid");
  }
  radius = std::max(radius, 0);
  const double sigma = radius / 3.0;
  const double two_sigma2 = 2.0 * sigma * sigma;
  for (int dy = -radius; dy <= radius; ++dy) {
    const int y = cy + dy;
    if (y < 0 || y >= map.height) continue;
    for (int dx = -radius; dx <= radius; ++dx) {
      const int x = cx + dx;
      if (x < 0 || x >= map.width) continue;
      const double d2 = static_cast<double>(dx * dx + dy * dy);
      const auto v = static_cast<float>(d2 == 0.0 ? 1.0 : std::exp(-d2 / two_sigma2));
      float& cell = map(0, y, x);
      cell = std::max(cell, v);
    }
  }
}

TargetMaps encode_targets(const LandmarkSet& landmarks, const GridSpec& grid) {
  grid.validate();
  landmarks.validate();
  if (!landmarks.points.empty() && !landmarks.has_boxes()) {
    throw std::invalid_argument("encode_targets: landmarks need boxes");
  }
  const int gw = grid.grid_w();
  const int gh = grid.grid_h();
  const double d = grid.downsample;

  TargetMaps t;
  t.y_map = FeatureMap<float>(1, gh, gw);
  t.s_map = FeatureMap<float>(2, gh, gw);
  t.o_map = FeatureMap<float>(2, gh, gw);
  t.r_map = FeatureMap<float>(1, gh, gw);
  t.pos_mask = FeatureMap<float>(1, gh, gw);

  struct Cell {
    int u = 0;
    int v = 0;
    std::size_t source = 0;
  };
  std::vector<Cell> kept;
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const auto& p = landmarks.points[i];
    if (p.x() < 0.0 || p.y() < 0.0 || p.x() >= grid.input_w || p.y() >= grid.input_h) {
      throw std::invalid_argument("encode_targets: landmark " + std::to_string(i) + " center (" +
                                  std::to_string(p.x()) + ", " + std::to_string(p.y()) + ") outside the image");
    }
    Cell c{static_cast<int>(std::floor(p.x() / d)), static_cast<int>(std::floor(p.y() / d)), i};
    auto clash = std::find_if(kept.begin(), kept.end(), [&](const Cell& k) { return k.u == c.u && k.v == c.v; });
    if (clash == kept.end()) {
      kept.push_back(c);
      continue;
    }
    const auto& a = landmarks.boxes[clash->source];
    const auto& b = landmarks.boxes[i];
    std::clog << "warning: landmarks " << clash->source << " and " << i << " share grid cell (" << c.u << ", "
              << c.v << "); keeping the larger box\n";
    if (b.w * b.h > a.w * a.h) clash->source = i;
  }
  std::sort(kept.begin(), kept.end(), [](const Cell& a, const Cell& b) { return a.source < b.source; });

  std::vector<int> radii;
  for (const auto& c : kept) {
    const auto& p = landmarks.points[c.source];
    const auto& box = landmarks.boxes[c.source];
    const int r = static_cast<int>(std::floor(gaussian_radius(box.w / d, box.h / d)));
    radii.push_back(r);
    render_gaussian(t.y_map, c.u, c.v, r);
    t.s_map(0, c.v, c.u) = static_cast<float>(box.w);
    t.s_map(1, c.v, c.u) = static_cast<float>(box.h);
    t.o_map(0, c.v, c.u) = static_cast<float>(p.x() / d - c.u);
    t.o_map(1, c.v, c.u) = static_cast<float>(p.y() / d - c.v);
    t.pos_mask(0, c.v, c.u) = 1.0f;
    t.encoded_centers.push_back(p);
  }

  const CurvePath path = order_landmarks(t.encoded_centers);
  const auto mids = midpoints(t.encoded_centers, path);
  for (std::size_t e = 0; e < mids.size(); ++e) {
    const auto& m = mids[e];
    const int u = static_cast<int>(std::floor(m.x() / d));
    const int v = static_cast<int>(std::floor(m.y() / d));
    if (u < 0 || v < 0 || u >= gw || v >= gh) continue;
    const auto [i, j] = path.edges[e];
    render_gaussian(t.r_map, u, v, std::min(radii[i], radii[j]));
    t.relation_points.push_back(m);
  }
  return t;
}

std::vector<Detection> decode(const FeatureMap<float>& y_hat, const FeatureMap<float>& s_hat,
                              const FeatureMap<float>& o_hat, const GridSpec& grid, int top_k) {
  if (top_k < 1) throw std::invalid_argument("decode: top_k must be >= 1");
  const int gw = y_hat.width;
  const int gh = y_hat.height;
  if (gw != grid.grid_w() || gh != grid.grid_h() || !s_hat.same_shape(o_hat) || s_hat.channels != 2 ||
      s_hat.width != gw || s_hat.height != gh) {
    throw std::invalid_argument("decode: output tensors do not match the grid");
  }

  struct Peak {
    float score;
    int index;
  };
  std::vector<Peak> peaks;
  peaks.reserve(static_cast<std::size_t>(gw) * gh / 4);
  const float* y = y_hat.data.row(0).data();
  for (int v = 0; v < gh; ++v) {
    const int v0 = std::max(v - 1, 0);
    const int v1 = std::min(v + 1, gh - 1);
    for (int u = 0; u < gw; ++u) {
      const float val = y[v * gw + u];
      const int u0 = std::max(u - 1, 0);
      const int u1 = std::min(u + 1, gw - 1);
      bool is_peak = true;
      for (int yy = v0; yy <= v1 && is_peak; ++yy) {
        for (int xx = u0; xx <= u1; ++xx) {
          if (y[yy * gw + xx] > val) {
            is_peak = false;
            break;
          }
        }
      }
      if (is_peak) peaks.push_back({val, v * gw + u});
    }
  }
  const auto keep = std::min<std::size_t>(peaks.size(), static_cast<std::size_t>(top_k));
  std::partial_sort(peaks.begin(), peaks.begin() + static_cast<std::ptrdiff_t>(keep), peaks.end(),
                    [](const Peak& a, const Peak& b) { return a.score > b.score || (a.score == b.score && a.index < b.index); });

  std::vector<Detection> dets;
  dets.reserve(keep);
  const double d = grid.downsample;
  for (std::size_t k = 0; k < keep; ++k) {
    const int u = peaks[k].index % gw;
    const int v = peaks[k].index / gw;
    Detection det;
    det.cx = (u + static_cast<double>(o_hat(0, v, u))) * d;
    det.cy = (v + static_cast<double>(o_hat(1, v, u))) * d;
    det.w = std::max(0.0, static_cast<double>(s_hat(0, v, u)));
    det.h = std::max(0.0, static_cast<double>(s_hat(1, v, u)));
    det.score = std::clamp(static_cast<double>(peaks[k].score), 0.0, 1.0);
    dets.push_back(det);
  }
  return dets;
}

}  // namespace relnet
