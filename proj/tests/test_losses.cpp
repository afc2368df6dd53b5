#include "oracles.hpp"
#include "relnet/losses.hpp"

#include <doctest.h>

#include <random>

using namespace relnet;

namespace {

FeatureMap<double> random_map(std::mt19937_64& rng, int c, int h, int w, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  FeatureMap<double> m(c, h, w);
  for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = u(rng);
  return m;
}

/// Heatmap-like target: a few exact ones, the rest in [0, 0.9].
FeatureMap<double> random_target(std::mt19937_64& rng, int h, int w) {
  FeatureMap<double> t = random_map(rng, 1, h, w, 0.0, 0.9);
  std::uniform_int_distribution<Eigen::Index> cell(0, t.pixels() - 1);
  for (int k = 0; k < 3; ++k) t.data(0, cell(rng)) = 1.0;
  return t;
}

/// Central differences of f over every entry of `x`.
template <typename F>
double worst_map_error(FeatureMap<double>& x, const FeatureMap<double>& analytic, F f, double h = 1e-3) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    const double keep = x.data.data()[i];
    x.data.data()[i] = keep + h;
    const double up = f();
    x.data.data()[i] = keep - h;
    const double down = f();
    x.data.data()[i] = keep;
    worst = std::max(worst, oracle::relative_error(analytic.data.data()[i], (up - down) / (2 * h)));
  }
  return worst;
}

}  // namespace

TEST_CASE("scalar objective values at score 0.5") {
  const LossWeights w;
  CHECK(gce_loss({0.5, 0.5, 0.5, 0.5}, w) == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK(adversarial_loss({0.5, 0.5, 0.5}, w) == doctest::Approx(1.45561).epsilon(1e-4));
  CHECK(gce_loss({0.5, 0.5, 0.5, 0.5}, w) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(adversarial_loss({0.5, 0.5, 0.5}, w) == doctest::Approx(2.1 * std::log(2.0)).epsilon(1e-12));
  // perfect evaluator
  CHECK(gce_loss({1.0 - 1e-12, 1e-12, 1e-12, 1e-12}, w) < 1e-6);
  CHECK(detection_total(2.0, 1.5, w) == doctest::Approx(2.15));
  CHECK(detection_total(2.0, 1.45561, w) == doctest::Approx(2.145561).epsilon(1e-12));
  CHECK(detection_total(0.0, 0.0, w) == 0.0);

  LossWeights no_fake = w;
  no_fake.lambda_f = 0.0;
  CHECK(gce_loss({0.8, 0.3, 0.6, 0.9}, no_fake) == doctest::Approx(-std::log(0.8)).epsilon(1e-12));
  LossWeights no_double = w;
  no_double.lambda_i = 0.0;
  CHECK(adversarial_loss({0.8, 0.3, 0.01}, no_double) ==
        doctest::Approx(-std::log(0.8) - std::log(0.3)).epsilon(1e-12));
  no_double.alpha_e = 0.0;
  CHECK(detection_total(2.0, 5.0, no_double) == 2.0);
}

TEST_CASE("logit forms agree with the score forms") {
  const LossWeights w;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 4> z{u(rng), u(rng), u(rng), u(rng)};
    std::array<double, 4> s{};
    for (int k = 0; k < 4; ++k) s[static_cast<std::size_t>(k)] = 1.0 / (1.0 + std::exp(-z[static_cast<std::size_t>(k)]));
    CHECK(gce_loss_logits(z, w) == doctest::Approx(gce_loss(s, w)).epsilon(1e-10));
    CHECK(adversarial_loss_logits<double>({z[0], z[1], z[2]}, w) ==
          doctest::Approx(adversarial_loss({s[0], s[1], s[2]}, w)).epsilon(1e-10));

    std::array<double, 4> g{};
    gce_loss_logits(z, w, &g);
    std::array<double, 3> ga{};
    adversarial_loss_logits<double>({z[0], z[1], z[2]}, w, &ga);
    for (std::size_t k = 0; k < 4; ++k) {
      auto zp = z;
      auto zm = z;
      zp[k] += 1e-5;
      zm[k] -= 1e-5;
      CHECK(oracle::relative_error(g[k], (gce_loss_logits(zp, w) - gce_loss_logits(zm, w)) / 2e-5) < 1e-6);
      if (k < 3) {
        const double up = adversarial_loss_logits<double>({zp[0], zp[1], zp[2]}, w);
        const double dn = adversarial_loss_logits<double>({zm[0], zm[1], zm[2]}, w);
        CHECK(oracle::relative_error(ga[k], (up - dn) / 2e-5) < 1e-6);
      }
    }
  }
  // no overflow far from zero
  CHECK(std::isfinite(gce_loss_logits<double>({-800.0, 800.0, 800.0, 800.0}, w)));
}

TEST_CASE("focal loss values") {
  FeatureMap<double> p = FeatureMap<double>::Constant(1, 1, 1, 0.5);
  FeatureMap<double> y = FeatureMap<double>::Constant(1, 1, 1, 1.0);
  CHECK(focal_heatmap_loss(p, y, 2.0) == doctest::Approx(0.17329).epsilon(1e-5));
  CHECK(focal_heatmap_loss(p, y, 2.0, FocalForm::Literal) == doctest::Approx(0.25 * std::log(2.0)));

  // one positive, one negative with gt 0.5
  FeatureMap<double> p2(1, 1, 2), y2(1, 1, 2);
  p2.data << 0.8, 0.3;
  y2.data << 1.0, 0.5;
  const double pos = -std::pow(0.2, 2) * std::log(0.8);
  const double neg = -std::pow(0.5, 4) * std::pow(0.3, 2) * std::log(0.7);
  CHECK(focal_heatmap_loss(p2, y2, 2.0) == doctest::Approx(pos + neg).epsilon(1e-12));
  CHECK(focal_heatmap_loss(p2, y2, 2.0, FocalForm::Literal) == doctest::Approx(pos).epsilon(1e-12));

  // positive at 0.5 beside near-zero negatives
  FeatureMap<double> p4(1, 1, 3), y4(1, 1, 3);
  p4.data << 0.5, 1e-7, 1e-7;
  y4.data << 1.0, 0.0, 0.0;
  CHECK(focal_heatmap_loss(p4, y4, 2.0) == doctest::Approx(0.17329).epsilon(1e-5));
  // negative at 0.5 beside a perfect positive
  p4.data << 1.0 - 1e-7, 0.5, 1e-7;
  CHECK(focal_heatmap_loss(p4, y4, 2.0) == doctest::Approx(0.17329).epsilon(1e-5));
  // pushing the positive toward 1 strictly lowers the loss
  double prev = INFINITY;
  for (double q = 0.05; q < 1.0; q += 0.05) {
    p4.data << q, 0.2, 0.1;
    const double l = focal_heatmap_loss(p4, y4, 2.0);
    CHECK(l < prev);
    prev = l;
  }

  // no positives: normaliser is 1
  FeatureMap<double> y0(1, 1, 2);
  CHECK(focal_heatmap_loss(p2, y0, 2.0) ==
        doctest::Approx(-std::pow(0.8, 2) * std::log(0.2) - std::pow(0.3, 2) * std::log(0.7)).epsilon(1e-12));

  // saturated predictions stay finite
  FeatureMap<double> p3(1, 1, 2);
  p3.data << 0.0, 1.0;
  FeatureMap<double> y3(1, 1, 2);
  y3.data << 1.0, 0.0;
  CHECK(std::isfinite(focal_heatmap_loss(p3, y3, 2.0)));
  CHECK_THROWS(focal_heatmap_loss(p3, FeatureMap<double>(1, 2, 1), 2.0));
}

TEST_CASE("focal loss gradient") {
  std::mt19937_64 rng(8);
  for (auto form : {FocalForm::PenaltyReduced, FocalForm::Literal}) {
    for (int trial = 0; trial < 10; ++trial) {
      FeatureMap<double> p = random_map(rng, 1, 8, 8, 0.05, 0.95);
      const FeatureMap<double> y = random_target(rng, 8, 8);
      FeatureMap<double> g;
      focal_heatmap_loss(p, y, 2.0, form, &g);
      CHECK(worst_map_error(p, g, [&] { return focal_heatmap_loss(p, y, 2.0, form); }) < 1e-3);
    }
  }
}

TEST_CASE("masked L1") {
  FeatureMap<double> pred(2, 1, 3), gt(2, 1, 3), mask(1, 1, 3);
  pred.data << 1, 2, 3, 4, 5, 6;
  gt.data << 0, 2, 0, 4, 3, 0;
  mask.data << 1, 1, 0;
  // masked cells 0 and 1: |1| + |0| + |0| + |2| over 2 cells x 2 channels
  CHECK(l1_masked(pred, gt, mask) == doctest::Approx(0.75));
  CHECK(l1_masked(pred, gt, FeatureMap<double>(1, 1, 3)) == 0.0);
  {
    FeatureMap<double> sp(2, 1, 1), sg(2, 1, 1), m1(1, 1, 1);
    sp.data << 22, 14;
    sg.data << 20, 12;
    m1.data << 1;
    CHECK(l1_masked(sp, sg, m1) == 2.0);
  }
  {
    // exact equality: zero loss and zero subgradient
    FeatureMap<double> g;
    CHECK(l1_masked(gt, gt, mask, &g) == 0.0);
    CHECK(g.data.cwiseAbs().maxCoeff() == 0.0);
  }

  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    FeatureMap<double> p = random_map(rng, 2, 8, 8, -3.0, 3.0);
    FeatureMap<double> t = random_map(rng, 2, 8, 8, -3.0, 3.0);
    FeatureMap<double> m(1, 8, 8);
    std::uniform_int_distribution<int> coin(0, 3);
    for (Eigen::Index k = 0; k < m.pixels(); ++k) m.data(0, k) = coin(rng) == 0 ? 1.0 : 0.0;
    // keep away from the kink
    for (Eigen::Index i = 0; i < p.data.size(); ++i) {
      if (std::abs(p.data.data()[i] - t.data.data()[i]) < 0.01) p.data.data()[i] += 0.05;
    }
    FeatureMap<double> g;
    l1_masked(p, t, m, &g);
    CHECK(worst_map_error(p, g, [&] { return l1_masked(p, t, m); }) < 1e-3);
  }
}

TEST_CASE("multi-task combination") {
  std::mt19937_64 rng(13);
  LandmarkSet set{{{20.0, 20.0}, {44.5, 30.25}, {60.0, 10.0}}, {{8, 8}, {10, 6}, {12, 12}}};
  const TargetMaps t = encode_targets(set, GridSpec{64, 64, 4});
  NetworkOutput<double> out{random_map(rng, 1, 16, 16, 0.05, 0.95), random_map(rng, 2, 16, 16, 0.0, 15.0),
                            random_map(rng, 2, 16, 16, 0.0, 1.0), random_map(rng, 1, 16, 16, 0.05, 0.95)};
  LossWeights w;
  NetworkOutput<double> g;
  const LossReport r = multi_task_loss(out, t, w, &g);
  CHECK(r.l_mul == doctest::Approx(r.l_lh + 0.1 * r.l_ls + 0.1 * r.l_lo + 1.0 * r.l_rh));
  CHECK(r.l_rh > 0.0);
  CHECK_FALSE(r.l_ga.has_value());

  auto loss = [&] { return multi_task_loss(out, t, w).l_mul; };
  CHECK(worst_map_error(out.y_hat, g.y_hat, loss) < 1e-3);
  CHECK(worst_map_error(out.s_hat, g.s_hat, loss) < 1e-3);
  CHECK(worst_map_error(out.o_hat, g.o_hat, loss) < 1e-3);
  CHECK(worst_map_error(out.r_hat, g.r_hat, loss) < 1e-3);

  w.alpha_r = 0.0;
  const LossReport r0 = multi_task_loss(out, t, w, &g);
  CHECK(r0.l_rh == 0.0);
  CHECK(g.r_hat.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("weights and focal form parsing") {
  CHECK(parse_focal_form("literal") == FocalForm::Literal);
  CHECK(parse_focal_form(to_string(FocalForm::PenaltyReduced)) == FocalForm::PenaltyReduced);
  CHECK_THROWS(parse_focal_form("other"));
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.alpha_e = -1;
  CHECK_THROWS(w.validate());
}
