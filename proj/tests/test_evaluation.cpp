#include "oracles.hpp"
#include "relnet/evaluation.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace relnet;

using oracle::det_at;
using oracle::micro_scenario;

TEST_CASE("iou examples") {
  CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
  CHECK(iou({0, 0, 10, 10}, {20, 20, 5, 5}) == 0.0);
  CHECK(iou({0, 0, 10, 10}, {5, 0, 10, 10}) == doctest::Approx(50.0 / 150.0).epsilon(1e-12));
  CHECK(iou({0, 0, 0, 0}, {0, 0, 0, 0}) == 0.0);
  const Box b = to_box({10, 20, 4, 6, 0.5});
  CHECK(b.x == 8);
  CHECK(b.y == 17);
}

TEST_CASE("matching examples") {
  const std::vector<Box> one = {{0, 0, 10, 10}};
  // IoU 0.6: [0,0,10,10] vs [0,0,10,6]
  CHECK(match_detections({det_at(0, 0, 10, 6, 0.9)}, one, 0.5) == std::vector<bool>{true});
  CHECK(match_detections({det_at(0, 0, 10, 10, 0.9), det_at(0, 0, 10, 9, 0.8)}, one, 0.5) ==
        std::vector<bool>{true, false});
  // IoU exactly 0.5
  CHECK(iou({0, 0, 10, 10}, to_box(det_at(0, 0, 10, 5, 0.9))) == 0.5);
  CHECK(match_detections({det_at(0, 0, 10, 5, 0.9)}, one, 0.5) == std::vector<bool>{true});
  // the detection takes the better of two ground truths
  const std::vector<Box> two = {{0, 0, 10, 10}, {2, 0, 10, 10}};
  const auto flags = match_detections({det_at(2, 0, 10, 10, 0.9), det_at(0, 0, 10, 10, 0.8)}, two, 0.5);
  CHECK(flags == std::vector<bool>{true, true});
}

TEST_CASE("hand-computed average precision") {
  ImageEval im;
  im.gts = {{0, 0, 10, 10}, {50, 50, 10, 10}};
  im.dets = {det_at(0, 0, 10, 10, 0.9), det_at(100, 100, 10, 10, 0.8), det_at(50, 50, 10, 10, 0.7)};
  const auto ap50 = average_precision({im}, 0.5);
  REQUIRE(ap50.has_value());
  CHECK(*ap50 == doctest::Approx(0.8350).epsilon(1e-4));
  CHECK(*ap50 == doctest::Approx((51.0 + 50.0 * 2.0 / 3.0) / 101.0).epsilon(1e-12));

  ImageEval perfect{0, {det_at(0, 0, 10, 10, 0.9), det_at(50, 50, 10, 10, 0.8)}, im.gts};
  CHECK(*average_precision({perfect}, 0.5) == 1.0);
  CHECK(*ap_coco({perfect}) == 1.0);
  ImageEval none{0, {}, im.gts};
  CHECK(*average_precision({none}, 0.5) == 0.0);
  ImageEval no_gt{0, im.dets, {}};
  CHECK_FALSE(average_precision({no_gt}, 0.5).has_value());
  CHECK_FALSE(recall_at({no_gt}).has_value());
}

TEST_CASE("average precision matches brute-force enumeration") {
  std::mt19937_64 rng(2024);
  int compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto images = micro_scenario(rng);
    for (double thr : {0.5, 0.75}) {
      const auto ap = average_precision(images, thr);
      std::size_t n_gt = 0;
      for (const auto& im : images) n_gt += im.gts.size();
      if (n_gt == 0) {
        CHECK_FALSE(ap.has_value());
        continue;
      }
      REQUIRE(ap.has_value());
      CHECK(std::abs(*ap - oracle::brute_force_ap(images, thr)) <= 1e-9);
      ++compared;
    }
    const auto coco = ap_coco(images);
    const auto ap50 = average_precision(images, 0.5);
    if (coco) {
      CHECK(*coco <= *ap50 + 1e-12);
      CHECK(*coco >= 0.0);
      CHECK(*ap50 <= 1.0);
    }
  }
  CHECK(compared > 300);
}

TEST_CASE("duplicating a true positive never raises AP") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto images = micro_scenario(rng, true);
    const auto before = average_precision(images, 0.5);
    if (!before) continue;
    for (auto& im : images) {
      std::vector<Detection> sorted = im.dets;
      std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
      const auto flags = match_detections(sorted, im.gts, 0.5);
      for (std::size_t k = 0; k < flags.size(); ++k) {
        if (flags[k]) {
          im.dets.push_back(sorted[k]);
          break;
        }
      }
    }
    CHECK(*average_precision(images, 0.5) <= *before + 1e-12);
  }
}

TEST_CASE("recall examples") {
  const std::vector<Box> gts = {{0, 0, 10, 10}, {50, 50, 10, 10}};
  CHECK(*recall_at({{0, {det_at(0, 0, 10, 10, 0.5)}, gts}}) == 0.5);
  CHECK(*recall_at({{0, {det_at(0, 0, 10, 10, 0.5), det_at(50, 50, 10, 10, 0.2)}, gts}}) == 1.0);
  CHECK(*recall_at({{0, {det_at(0, 0, 10, 10, 0.05)}, {gts[0]}}}) == 0.0);
  // two detections on one ground truth count once
  CHECK(*recall_at({{0, {det_at(0, 0, 10, 10, 0.9), det_at(0, 0, 10, 10, 0.8)}, gts}}) == 0.5);
}

TEST_CASE("report, folds and serialisation") {
  std::vector<ImageEval> images;
  for (int i = 0; i < 4; ++i) {
    ImageEval im;
    im.image_id = i;
    im.gts = {{10.0 * i, 0, 10, 10}};
    if (i % 2 == 0) im.dets = {det_at(10.0 * i, 0, 10, 10, 0.9)};
    images.push_back(im);
  }
  const auto rep = evaluate(images, {{0, 2}, {1, 3}});
  CHECK(rep.num_images == 4);
  CHECK(rep.num_gt == 4);
  CHECK(rep.num_det == 2);
  CHECK(*rep.recall == 0.5);
  REQUIRE(rep.per_fold.size() == 2);
  CHECK(*rep.per_fold[0].ap50 == 1.0);
  CHECK(*rep.per_fold[1].ap50 == 0.0);
  CHECK(*rep.ap <= *rep.ap50);
  CHECK_THROWS(evaluate(images, {{0, 9}}));

  const std::string json = metrics_to_json(rep);
  CHECK(json.find("\"ap50\"") != std::string::npos);
  CHECK(json.find("per_fold") != std::string::npos);
  const std::string table = metrics_table(rep, "ours");
  CHECK(table.find("AP50") != std::string::npos);
  CHECK(table.find("ours") != std::string::npos);

  const auto empty = evaluate({ImageEval{}});
  CHECK_FALSE(empty.ap.has_value());
  CHECK(metrics_to_json(empty).find("\"ap\"") == std::string::npos);

  const auto path = std::filesystem::temp_directory_path() / "relnet_test_dets.json";
  const std::vector<ScoredBox> dets = {{3, {12.5, 7.25, 4, 6, 0.875}}, {1, {1, 2, 3, 4, 0.5}}};
  write_detections(path, dets);
  const auto back = read_detections(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == 3);
  CHECK(back[0].det.cx == 12.5);
  CHECK(back[0].det.cy == 7.25);
  CHECK(back[0].det.score == 0.875);
  std::filesystem::remove(path);
}
