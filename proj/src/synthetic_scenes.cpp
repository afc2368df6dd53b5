#include "relnet/synthetic_scenes.hpp"

#include "relnet/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace relnet {

namespace {

constexpr int kMaxTries = 100;
constexpr int kSamplesPerSegment = 32;

using Rgb3 = std::array<double, 3>;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Point2 catmull_rom(const Point2& p0, const Point2& p1, const Point2& p2, const Point2& p3, double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

double cross(const Point2& a, const Point2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool segments_cross(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
  const double d1 = cross(b - a, c - a);
  const double d2 = cross(b - a, d - a);
  const double d3 = cross(d - c, a - c);
  const double d4 = cross(d - c, b - c);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

bool self_intersects(const std::vector<Point2>& poly) {
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    for (std::size_t j = i + 2; j + 1 < poly.size(); ++j) {
      if (segments_cross(poly[i], poly[i + 1], poly[j], poly[j + 1])) return true;
    }
  }
  return false;
}

struct Curve {
  std::vector<Point2> poly;
  std::vector<double> arclen;  // cumulative
  Point2 center;
  double radius = 0.0;

  [[nodiscard]] Point2 at(double s) const {
    auto it = std::lower_bound(arclen.begin(), arclen.end(), s);
    if (it == arclen.begin()) return poly.front();
    if (it == arclen.end()) return poly.back();
    const auto i = static_cast<std::size_t>(it - arclen.begin());
    const double seg = arclen[i] - arclen[i - 1];
    const double t = seg > 0 ? (s - arclen[i - 1]) / seg : 0.0;
    return poly[i - 1] + t * (poly[i] - poly[i - 1]);
  }
};

Curve sample_curve(const SceneConfig& cfg, std::mt19937_64& rng) {
  const double size = cfg.image_size;
  Curve curve;
  curve.center = Point2(size / 2 + uniform(rng, -0.1, 0.1) * size, size / 2 + uniform(rng, -0.1, 0.1) * size);
  curve.radius = uniform(rng, 0.27, 0.41) * size;
  const double start = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double span = uniform(rng, 110.0, 210.0) * std::numbers::pi / 180.0;
  const double dir = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;

  const int k = cfg.control_points;
  std::vector<Point2> ctrl(static_cast<std::size_t>(k) + 2);
  for (int i = 0; i < k; ++i) {
    const double theta = start + dir * span * i / (k - 1);
    const double r = curve.radius * (1.0 + cfg.smoothness * uniform(rng, -1.0, 1.0));
    ctrl[static_cast<std::size_t>(i) + 1] = curve.center + r * Point2(std::cos(theta), std::sin(theta));
  }
  ctrl.front() = 2.0 * ctrl[1] - ctrl[2];
  ctrl.back() = 2.0 * ctrl[static_cast<std::size_t>(k)] - ctrl[static_cast<std::size_t>(k) - 1];

  for (int seg = 0; seg + 1 < k; ++seg) {
    const auto s = static_cast<std::size_t>(seg);
    for (int j = 0; j < kSamplesPerSegment; ++j) {
      curve.poly.push_back(catmull_rom(ctrl[s], ctrl[s + 1], ctrl[s + 2], ctrl[s + 3],
                                       static_cast<double>(j) / kSamplesPerSegment));
    }
  }
  curve.poly.push_back(ctrl[static_cast<std::size_t>(k)]);
  curve.arclen.assign(curve.poly.size(), 0.0);
  for (std::size_t i = 1; i < curve.poly.size(); ++i) {
    curve.arclen[i] = curve.arclen[i - 1] + (curve.poly[i] - curve.poly[i - 1]).norm();
  }
  return curve;
}

void blend(Image& img, int x, int y, const Rgb3& color, double alpha) {
  for (int c = 0; c < 3; ++c) {
    float& v = img(c, y, x);
    v = static_cast<float>((1.0 - alpha) * v + alpha * color[static_cast<std::size_t>(c)]);
  }
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// Soft-edged rotated ellipse.
void paint_ellipse(Image& img, const Point2& c, double a, double b, double angle, const Rgb3& color, double alpha) {
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  const double reach = std::max(a, b) + 2.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - reach)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(c.x() + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - reach)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(c.y() + reach)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - c.x();
      const double dy = y - c.y();
      const double u = (ca * dx + sa * dy) / a;
      const double v = (-sa * dx + ca * dy) / b;
      const double rho = std::sqrt(u * u + v * v);
      const double w = 1.0 - smoothstep(0.7, 1.0, rho);
      if (w > 0) blend(img, x, y, color, alpha * w);
    }
  }
}

void paint_dot(Image& img, const Point2& c, double radius, const Rgb3& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - radius - 1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(c.x() + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - radius - 1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(c.y() + radius + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = (Point2(x, y) - c).norm();
      const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      if (coverage > 0) blend(img, x, y, color, 0.92 * coverage);
    }
  }
}

void render_background(Image& img, const Curve& curve, std::mt19937_64& rng) {
  Rgb3 base = {0.82, 0.52, 0.47};
  for (auto& b : base) b += uniform(rng, -0.05, 0.05);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<Wave, 4> waves{};
  for (auto& w : waves) {
    const double f = uniform(rng, 0.02, 0.08) * 2.0 * std::numbers::pi;
    const double dir = uniform(rng, 0.0, std::numbers::pi);
    w = {f * std::cos(dir), f * std::sin(dir), uniform(rng, 0.0, 2.0 * std::numbers::pi), uniform(rng, 0.015, 0.035)};
  }
  const Rgb3 lesion = {0.92, 0.78, 0.72};
  const double lesion_r = 0.85 * curve.radius;
  std::normal_distribution<double> noise(0.0, 0.012);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double tex = 0.0;
      for (const auto& w : waves) tex += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      const double inside = 1.0 - smoothstep(lesion_r - 6.0, lesion_r + 6.0, (Point2(x, y) - curve.center).norm());
      for (int c = 0; c < 3; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        double v = base[cc] + tex * (c == 0 ? 1.0 : 0.8);
        v += 0.12 * inside * (lesion[cc] - v);
        img(c, y, x) = static_cast<float>(v + noise(rng));
      }
    }
  }
}

}  // namespace

void SceneConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("scene config: image_size must be >= 16");
  if (n_min < 2 || n_max > 12 || n_min > n_max) throw std::invalid_argument("scene config: need 2 <= n_min <= n_max <= 12");
  if (control_points < 3) throw std::invalid_argument("scene config: control_points must be >= 3");
  if (!(smoothness >= 0.0 && smoothness < 0.5)) throw std::invalid_argument("scene config: smoothness must be in [0, 0.5)");
  if (!(radius_min > 0.0 && radius_min <= radius_max)) {
    throw std::invalid_argument("scene config: need 0 < radius_min <= radius_max");
  }
  if (!(occlusion_frac >= 0.0 && occlusion_frac <= 1.0)) {
    throw std::invalid_argument("scene config: occlusion_frac must be in [0,1]");
  }
  if (specular_count < 0) throw std::invalid_argument("scene config: specular_count must be >= 0");
  if (!(blur_sigma >= 0.0)) throw std::invalid_argument("scene config: blur_sigma must be >= 0");
}

SceneConfig SceneConfig::hard() {
  SceneConfig cfg;
  cfg.occlusion_frac = 0.3;
  cfg.specular_count = 3;
  cfg.blur_sigma = 1.0;
  return cfg;
}

std::mt19937_64 scene_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

SceneSample generate_scene(const SceneConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const double size = cfg.image_size;
  const double margin = cfg.radius_max + 1.0;
  const double min_spacing = 2.6 * cfg.radius_max;

  Curve curve;
  std::vector<Point2> centers;
  bool accepted = false;
  for (int attempt = 0; attempt < kMaxTries && !accepted; ++attempt) {
    curve = sample_curve(cfg, rng);
    const int n = std::uniform_int_distribution<int>(cfg.n_min, cfg.n_max)(rng);
    const double length = curve.arclen.back();
    centers.clear();
    for (int i = 0; i < n; ++i) {
      centers.push_back(curve.at(length * (i + 0.5 + uniform(rng, -0.25, 0.25)) / n));
    }
    if (self_intersects(curve.poly)) continue;
    accepted = std::all_of(centers.begin(), centers.end(), [&](const Point2& p) {
      return p.x() >= margin && p.y() >= margin && p.x() <= size - 1 - margin && p.y() <= size - 1 - margin;
    });
    for (std::size_t i = 0; accepted && i < centers.size(); ++i) {
      for (std::size_t j = i + 1; j < centers.size(); ++j) {
        if ((centers[i] - centers[j]).norm() < min_spacing) {
          accepted = false;
          break;
        }
      }
    }
  }
  if (!accepted) throw std::runtime_error("generate_scene: no valid curve after 100 proposals");

  SceneSample sample;
  const std::size_t n = centers.size();
  sample.image = Image(3, cfg.image_size, cfg.image_size);
  render_background(sample.image, curve, rng);

  sample.meta.dot_radius.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = uniform(rng, cfg.radius_min, cfg.radius_max);
    sample.meta.dot_radius[i] = r;
    const Rgb3 dot = {0.22 + uniform(rng, -0.03, 0.03), 0.10 + uniform(rng, -0.03, 0.03),
                      0.09 + uniform(rng, -0.03, 0.03)};
    paint_dot(sample.image, centers[i], r, dot);
    sample.landmarks.points.push_back(centers[i]);
    sample.landmarks.boxes.push_back({2.5 * r, 2.5 * r});
  }

  // bleeding over a random subset of the dots
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_occ = static_cast<std::size_t>(std::lround(cfg.occlusion_frac * static_cast<double>(n)));
  sample.meta.occluded.assign(n, false);
  for (std::size_t k = 0; k < n_occ; ++k) {
    const std::size_t i = idx[k];
    const double r = sample.meta.dot_radius[i];
    const Point2 c = centers[i] + Point2(uniform(rng, -0.3, 0.3) * r, uniform(rng, -0.3, 0.3) * r);
    const Rgb3 blood = {0.55 + uniform(rng, -0.05, 0.05), 0.04, 0.05};
    paint_ellipse(sample.image, c, uniform(rng, 1.8, 2.8) * r, uniform(rng, 1.8, 2.8) * r,
                  uniform(rng, 0.0, std::numbers::pi), blood, 0.85);
    sample.meta.occluded[i] = true;
  }
  sample.meta.n_occluded = static_cast<int>(n_occ);

  for (int s = 0; s < cfg.specular_count; ++s) {
    const Point2 c(uniform(rng, 0.0, size - 1), uniform(rng, 0.0, size - 1));
    paint_ellipse(sample.image, c, uniform(rng, 2.0, 8.0), uniform(rng, 2.0, 8.0), uniform(rng, 0.0, std::numbers::pi),
                  {1.0, 1.0, 0.97}, 0.95);
  }
  sample.meta.specular_count = cfg.specular_count;

  gaussian_blur(sample.image, cfg.blur_sigma);
  sample.meta.blur_sigma = cfg.blur_sigma;
  sample.image.data = sample.image.data.cwiseMax(0.0f).cwiseMin(1.0f);
  return sample;
}

void gaussian_blur(Image& image, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * static_cast<std::size_t>(radius) + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(k + radius)];
  }
  for (auto& k : kernel) k /= sum;

  Image tmp = image;
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] * image(c, y, std::clamp(x + k, 0, image.width - 1));
        }
        tmp(c, y, x) = static_cast<float>(acc);
      }
    }
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp(c, std::clamp(y + k, 0, image.height - 1), x);
        }
        image(c, y, x) = static_cast<float>(acc);
      }
    }
  }
}

std::vector<DatasetEntry> generate_dataset(const SceneConfig& cfg, int count, int folds,
                                           const std::filesystem::path& out_dir) {
  cfg.validate();
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  if (folds < 1 || folds > count) throw std::invalid_argument("generate_dataset: need 1 <= folds <= count");
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "folds");
  std::vector<DatasetEntry> entries;
  for (int i = 0; i < count; ++i) {
    SceneSample s = generate_scene(cfg, static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.png", i);
    write_png_rgb(out_dir / name, s.image);
    entries.push_back({i, name, cfg.image_size, cfg.image_size, s.meta.n_occluded, std::move(s.landmarks)});
  }
  write_annotations(out_dir / "annotations.json", entries);
  for (int k = 0; k < folds; ++k) {
    std::vector<int> ids;
    for (int i = k * count / folds; i < (k + 1) * count / folds; ++i) ids.push_back(i);
    write_fold(out_dir / "folds" / ("fold_" + std::to_string(k) + ".txt"), ids);
  }
  return entries;
}

}  // namespace relnet
