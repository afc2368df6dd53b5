#include "oracles.hpp"
#include "relnet/gce.hpp"
#include "relnet/losses.hpp"

#include <doctest.h>

#include <random>

using namespace relnet;

namespace {

FeatureMap<double> random_heatmap(std::mt19937_64& rng, int size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeatureMap<double> m(1, size, size);
  for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = u(rng);
  return m;
}

/// Evaluator objective over the four pairs (Y;R), (Yhat;R), (Y;Rhat), (Yhat;Rhat).
struct Quad {
  std::array<FeatureMap<double>, 4> inputs;

  Quad(std::mt19937_64& rng, int size) {
    const auto y = random_heatmap(rng, size), r = random_heatmap(rng, size);
    const auto yh = random_heatmap(rng, size), rh = random_heatmap(rng, size);
    inputs = {stack_pair(y, r), stack_pair(yh, r), stack_pair(y, rh), stack_pair(yh, rh)};
  }

  double loss(const Gce<double>& gce, const ParamStore<double>& q) const {
    std::array<double, 4> z{};
    for (std::size_t k = 0; k < 4; ++k) z[k] = gce.logit(inputs[k], q);
    return gce_loss_logits(z, LossWeights{});
  }

  ParamStore<double> grad(const Gce<double>& gce, const ParamStore<double>& q) const {
    std::array<double, 4> z{};
    std::array<GceCache<double>, 4> caches;
    for (std::size_t k = 0; k < 4; ++k) z[k] = gce.logit(inputs[k], q, &caches[k]);
    std::array<double, 4> gz{};
    gce_loss_logits(z, LossWeights{}, &gz);
    auto g = q.zeros_like();
    for (std::size_t k = 0; k < 4; ++k) gce.backward(caches[k], q, gz[k], &g, nullptr);
    return g;
  }
};

}  // namespace

TEST_CASE("evaluator parameter count is pinned") {
  const Gce<float> gce;
  const auto q = gce.init_params(0);
  CHECK(q.count() == 60257);
  CHECK_NOTHROW(gce.check_params(q));
  GceConfig small;
  small.widths = {8, 16, 32, 32};
  CHECK_THROWS(Gce<float>(small).check_params(q));
}

TEST_CASE("score is in the open unit interval and deterministic") {
  const Gce<double> gce;
  const auto q = gce.init_params(1);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    HeatmapPair<double> pair{random_heatmap(rng, 32), random_heatmap(rng, 32)};
    const double s = gce.evaluate(pair, q);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    CHECK(gce.evaluate(pair, q) == s);
  }
  CHECK(gce.init_params(4) == gce.init_params(4));
  CHECK_THROWS(stack_pair(FeatureMap<double>(2, 8, 8), FeatureMap<double>(1, 8, 8)));
  CHECK_THROWS(stack_pair(FeatureMap<double>(1, 8, 8), FeatureMap<double>(1, 4, 8)));
}

TEST_CASE("channel order matters") {
  const Gce<double> gce;
  const auto q = gce.init_params(3);
  std::mt19937_64 rng(4);
  int differs = 0;
  for (int i = 0; i < 100; ++i) {
    const auto a = random_heatmap(rng, 32), b = random_heatmap(rng, 32);
    if (std::abs(gce.logit(stack_pair(a, b), q) - gce.logit(stack_pair(b, a), q)) > 1e-9) ++differs;
  }
  CHECK(differs == 100);
}

TEST_CASE("evaluator objective gradient on the smallest grid") {
  // After four stride-2 blocks an 8x8 input is 1x1, where instance norm
  // outputs zero: the score is the bias alone.
  const Gce<double> gce;
  auto q = gce.init_params(5);
  std::mt19937_64 rng(6);
  const Quad quad(rng, 8);
  const auto g = quad.grad(gce, q);
  const auto rep = oracle::fd_check(q, g, [&] { return quad.loss(gce, q); }, 300, 7, 1e-5);
  CHECK(rep.worst < 1e-5);
  CHECK(rep.kinks * 10 <= rep.checked);
  CHECK(g.value(g.index_of("score.bias"))(0, 0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("evaluator objective gradient on a 32x32 grid") {
  const Gce<double> gce;
  auto q = gce.init_params(8);
  std::mt19937_64 rng(9);
  const Quad quad(rng, 32);
  const auto g = quad.grad(gce, q);
  const auto rep = oracle::fd_check(q, g, [&] { return quad.loss(gce, q); }, 3000, 10, 1e-5, 1e-6);
  CHECK(rep.checked == 3000);
  CHECK(rep.worst < 1e-4);
  CHECK(rep.kinks * 10 <= rep.checked);
}

TEST_CASE("input gradient matches central differences") {
  const Gce<double> gce;
  const auto q = gce.init_params(11);
  std::mt19937_64 rng(12);
  auto in = stack_pair(random_heatmap(rng, 32), random_heatmap(rng, 32));
  GceCache<double> cache;
  gce.logit(in, q, &cache);
  FeatureMap<double> gin;
  gce.backward(cache, q, 1.0, nullptr, &gin);
  REQUIRE(gin.channels == 2);
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < in.data.size(); ++i) {
    const double keep = in.data.data()[i];
    in.data.data()[i] = keep + h;
    const double up = gce.logit(in, q);
    in.data.data()[i] = keep - h;
    const double dn = gce.logit(in, q);
    in.data.data()[i] = keep;
    worst = std::max(worst, oracle::relative_error(gin.data.data()[i], (up - dn) / (2 * h)));
  }
  CHECK(worst < 1e-4);
}
