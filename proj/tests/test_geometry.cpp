#include "oracles.hpp"
#include "relnet/geometry.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <random>
#include <set>

using namespace relnet;

namespace {

std::vector<Point2> random_points(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 128.0);
  std::vector<Point2> pts;
  for (std::size_t i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng));
  return pts;
}

std::set<std::pair<std::size_t, std::size_t>> edge_set(const CurvePath& p) {
  return {p.edges.begin(), p.edges.end()};
}

}  // namespace

TEST_CASE("hand-traced four point path") {
  const std::vector<Point2> pts = {{0, 0}, {10, 0}, {30, 0}, {31, 5}};
  const CurvePath p = order_landmarks(pts);
  REQUIRE(p.edges.size() == 3);
  CHECK(p.edges[0] == std::make_pair<std::size_t, std::size_t>(2, 3));
  CHECK(p.edges[1] == std::make_pair<std::size_t, std::size_t>(1, 2));
  CHECK(p.edges[2] == std::make_pair<std::size_t, std::size_t>(0, 1));
  CHECK(p.order == std::vector<std::size_t>{0, 1, 2, 3});

  const auto mids = midpoints(pts, p);
  REQUIRE(mids.size() == 3);
  CHECK(mids[0].isApprox(Point2(30.5, 2.5)));
  CHECK(mids[1].isApprox(Point2(20, 0)));
  CHECK(mids[2].isApprox(Point2(5, 0)));
}

TEST_CASE("small and degenerate inputs") {
  CHECK(order_landmarks(std::vector<Point2>{}).edges.empty());
  const CurvePath one = order_landmarks(std::vector<Point2>{{3, 4}});
  CHECK(one.edges.empty());
  CHECK(midpoints({{3, 4}}, one).empty());

  const CurvePath two = order_landmarks(std::vector<Point2>{{0, 0}, {5, 5}});
  REQUIRE(two.edges.size() == 1);
  CHECK(two.edges[0] == std::make_pair<std::size_t, std::size_t>(0, 1));
  CHECK(midpoints({{0, 0}, {4, 4}}, order_landmarks(std::vector<Point2>{{0, 0}, {4, 4}}))[0].isApprox(Point2(2, 2)));

  const CurvePath line = order_landmarks(std::vector<Point2>{{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  CHECK(edge_set(line) == std::set<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}, {2, 3}});

  // coincident points are legal; the zero-length edge comes first
  const CurvePath dup = order_landmarks(std::vector<Point2>{{5, 5}, {0, 0}, {5, 5}});
  CHECK(dup.edges[0] == std::make_pair<std::size_t, std::size_t>(0, 2));
  CHECK(dup.is_simple_path(3));
}

TEST_CASE("ties resolve to the smallest index pair") {
  // unit square: four equal shortest edges, (0,1) wins
  const std::vector<Point2> sq = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const CurvePath p = order_landmarks(sq);
  CHECK(p.edges[0] == std::make_pair<std::size_t, std::size_t>(0, 1));
  CHECK(p.edges == oracle::greedy_path(sq));
}

TEST_CASE("matches the degree-based simulation on random sets") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 11);
    const auto pts = random_points(rng, n);
    const CurvePath p = order_landmarks(pts);
    REQUIRE(p.is_simple_path(n));
    REQUIRE(p.edges == oracle::greedy_path(pts));
    REQUIRE(midpoints(pts, p).size() == n - 1);
  }
}

TEST_CASE("integer grids with many ties still agree with the simulation") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> u(0, 4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Point2> pts;
    for (int i = 0; i < 2 + trial % 9; ++i) pts.emplace_back(u(rng), u(rng));
    const CurvePath p = order_landmarks(pts);
    REQUIRE(p.is_simple_path(pts.size()));
    REQUIRE(p.edges == oracle::greedy_path(pts));
  }
}

TEST_CASE("rigid motion keeps the edge set") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ang(0.0, 6.283185307179586);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pts = random_points(rng, 3 + static_cast<std::size_t>(trial % 9));
    const Eigen::Rotation2Dd rot(ang(rng));
    const Point2 shift(17.5, -4.25);
    std::vector<Point2> moved;
    for (const auto& q : pts) moved.push_back(rot * q + shift);
    CHECK(edge_set(order_landmarks(pts)) == edge_set(order_landmarks(moved)));
  }
}

TEST_CASE("is_simple_path rejects broken paths") {
  CurvePath p;
  p.edges = {{0, 1}, {1, 2}};
  p.order = {0, 1, 2};
  CHECK(p.is_simple_path(3));
  CHECK_FALSE(p.is_simple_path(4));
  CurvePath star;
  star.edges = {{0, 1}, {0, 2}, {0, 3}};
  star.order = {1, 0, 2, 3};
  CHECK_FALSE(star.is_simple_path(4));
  CurvePath wrong_order = p;
  wrong_order.order = {0, 2, 1};
  CHECK_FALSE(wrong_order.is_simple_path(3));
}

TEST_CASE("boundary polyline filters then orders") {
  std::vector<Detection> dets = {{0, 0, 4, 4, 0.9}, {10, 0, 4, 4, 0.8}, {30, 0, 4, 4, 0.25}, {31, 5, 4, 4, 0.05}};
  auto line = boundary_polyline(dets, 0.2);
  CHECK(line.size() == 3);

  for (auto& d : dets) d.score = 0.9;
  line = boundary_polyline(dets, 0.2);
  REQUIRE(line.size() == 4);
  CHECK(line[0].isApprox(Point2(0, 0)));
  CHECK(line[1].isApprox(Point2(10, 0)));
  CHECK(line[2].isApprox(Point2(30, 0)));
  CHECK(line[3].isApprox(Point2(31, 5)));

  CHECK(boundary_polyline({}, 0.2).empty());
  CHECK(boundary_polyline({{1, 2, 3, 3, 0.5}}, 0.2).size() == 1);
  CHECK_THROWS_AS(boundary_polyline(dets, 1.5), std::invalid_argument);
}

TEST_CASE("landmark set validation") {
  LandmarkSet ok{{{1, 2}, {3, 4}}, {{2, 2}, {3, 3}}};
  CHECK_NOTHROW(ok.validate());
  LandmarkSet misaligned{{{1, 2}, {3, 4}}, {{2, 2}}};
  CHECK_THROWS(misaligned.validate());
  LandmarkSet negative{{{1, 2}}, {{-1, 2}}};
  CHECK_THROWS(negative.validate());
  LandmarkSet nan{{{std::nan(""), 2}}, {}};
  CHECK_THROWS(nan.validate());
}
