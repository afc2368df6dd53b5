#include "relnet/dataset.hpp"
#include "relnet/synthetic_scenes.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace relnet;

namespace {

double luminance(const Image& img, int x, int y) {
  return (img(0, y, x) + img(1, y, x) + img(2, y, x)) / 3.0;
}

/// Sub-pixel dot center by fitting a + b * disk(c, r) to the luminance
/// around `guess`, scanning c on a 0.1 px grid.
Point2 template_match(const Image& img, const Point2& guess, double r) {
  const int reach = static_cast<int>(std::ceil(r)) + 3;
  double best_score = -1.0;
  Point2 best = guess;
  for (double dy = -3.0; dy <= 3.0 + 1e-9; dy += 0.1) {
    for (double dx = -3.0; dx <= 3.0 + 1e-9; dx += 0.1) {
      const Point2 c = guess + Point2(dx, dy);
      double n = 0, st = 0, sl = 0, stt = 0, stl = 0, sll = 0;
      for (int y = static_cast<int>(c.y()) - reach; y <= static_cast<int>(c.y()) + reach; ++y) {
        for (int x = static_cast<int>(c.x()) - reach; x <= static_cast<int>(c.x()) + reach; ++x) {
          if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
          const double t = (Point2(x, y) - c).norm() <= r ? 1.0 : 0.0;
          const double l = luminance(img, x, y);
          n += 1;
          st += t;
          sl += l;
          stt += t * t;
          stl += t * l;
          sll += l * l;
        }
      }
      const double cov = stl - st * sl / n;
      const double vt = stt - st * st / n;
      const double vl = sll - sl * sl / n;
      // dark dot: correlation must be negative
      const double score = cov < 0 ? cov * cov / (vt * vl) : 0.0;
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
  }
  return best;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("same seed gives identical scenes") {
  for (const auto& cfg : {SceneConfig::easy(), SceneConfig::hard()}) {
    for (std::uint64_t i = 0; i < 5; ++i) {
      const auto a = generate_scene(cfg, i);
      const auto b = generate_scene(cfg, i);
      CHECK(a.image.data == b.image.data);
      CHECK(a.landmarks.points == b.landmarks.points);
    }
    CHECK_FALSE(generate_scene(cfg, std::uint64_t{0}).image.data == generate_scene(cfg, std::uint64_t{1}).image.data);
  }
  SceneConfig other = SceneConfig::easy();
  other.seed = 99;
  CHECK_FALSE(generate_scene(other, std::uint64_t{0}).image.data ==
              generate_scene(SceneConfig::easy(), std::uint64_t{0}).image.data);
}

TEST_CASE("scene invariants") {
  SceneConfig six = SceneConfig::hard();
  six.n_min = six.n_max = 6;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto s = generate_scene(six, i);
    CHECK(s.landmarks.points.size() == 6);
    CHECK(s.landmarks.boxes.size() == 6);
    CHECK(s.meta.n_occluded == 2);  // round(0.3 * 6)
    CHECK(s.image.data.minCoeff() >= 0.0f);
    CHECK(s.image.data.maxCoeff() <= 1.0f);
    for (std::size_t k = 0; k < 6; ++k) {
      const auto& p = s.landmarks.points[k];
      CHECK(p.x() >= 0.0);
      CHECK(p.y() >= 0.0);
      CHECK(p.x() <= 127.0);
      CHECK(p.y() <= 127.0);
      CHECK(s.landmarks.boxes[k].w == doctest::Approx(2.5 * s.meta.dot_radius[k]));
    }
  }
  // occluded landmarks stay annotated: counts do not depend on corruption
  for (std::uint64_t i = 0; i < 20; ++i) {
    CHECK(generate_scene(SceneConfig::easy(), i).landmarks.points.size() ==
          generate_scene(SceneConfig::hard(), i).landmarks.points.size());
  }
  SceneConfig bad;
  bad.occlusion_frac = 1.5;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.n_min = 9;
  bad.n_max = 3;
  CHECK_THROWS(bad.validate());
  // no room for any layout
  SceneConfig cramped;
  cramped.image_size = 16;
  cramped.n_min = cramped.n_max = 12;
  CHECK_THROWS_AS(generate_scene(cramped, std::uint64_t{0}), std::runtime_error);
}

TEST_CASE("easy-split dot centers are recoverable by template matching") {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 30; ++i) {
    const auto s = generate_scene(SceneConfig::easy(), i);
    for (std::size_t k = 0; k < s.landmarks.points.size(); ++k) {
      const Point2& gt = s.landmarks.points[k];
      const Point2 est = template_match(s.image, gt, s.meta.dot_radius[k]);
      worst = std::max(worst, (est - gt).norm());
    }
  }
  CHECK(worst < 1.0);
}

TEST_CASE("generation order is recovered by the greedy path") {
  int recovered = 0;
  const int total = 1000;
  for (int i = 0; i < total; ++i) {
    const auto s = generate_scene(SceneConfig::easy(), static_cast<std::uint64_t>(i));
    const auto path = order_landmarks(s.landmarks);
    std::vector<std::size_t> fwd(s.landmarks.points.size());
    for (std::size_t k = 0; k < fwd.size(); ++k) fwd[k] = k;
    const std::vector<std::size_t> bwd(fwd.rbegin(), fwd.rend());
    if (path.order == fwd || path.order == bwd) ++recovered;
  }
  MESSAGE("order recovery on easy scenes: " << recovered << "/" << total);
  CHECK(recovered > 950);
}

TEST_CASE("dataset layout, folds and reproducibility") {
  const auto dir = std::filesystem::temp_directory_path() / "relnet_test_dataset";
  std::filesystem::remove_all(dir);
  SceneConfig cfg = SceneConfig::easy();
  cfg.image_size = 32;
  cfg.n_min = cfg.n_max = 2;
  cfg.radius_min = cfg.radius_max = 2.0;
  const auto entries = generate_dataset(cfg, 250, 5, dir);
  CHECK(entries.size() == 250);
  for (const auto& e : entries) CHECK(e.n_occluded == 0);
  const auto folds = read_folds(dir / "folds");
  REQUIRE(folds.size() == 5);
  std::vector<int> seen;
  for (const auto& f : folds) {
    CHECK(f.size() == 50);
    seen.insert(seen.end(), f.begin(), f.end());
  }
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < 250; ++i) CHECK(seen[static_cast<std::size_t>(i)] == i);

  const auto loaded = load_dataset(dir);
  REQUIRE(loaded.size() == 250);
  const auto direct = generate_scene(cfg, std::uint64_t{7});
  CHECK(loaded[7].landmarks.points == direct.landmarks.points);
  CHECK((loaded[7].image.data - direct.image.data).cwiseAbs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);

  const std::string first = slurp(dir / "annotations.json");
  std::filesystem::remove_all(dir);
  generate_dataset(cfg, 250, 5, dir);
  CHECK(slurp(dir / "annotations.json") == first);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(generate_dataset(cfg, 0, 1, dir));
}
