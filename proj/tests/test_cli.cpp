#include "cli.hpp"

#include "relnet/dataset.hpp"
#include "relnet/evaluation.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>

using namespace relnet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

fs::path small_dataset(const fs::path& root) {
  write_text(root / "gen.txt", "preset = hard\ncount = 8\nfolds = 2\nimage_size = 64\n");
  const fs::path ds = root / "ds";
  REQUIRE(cli_dispatch({"relnet", "gen-data", "--config", (root / "gen.txt").string(), "--out", ds.string()}) == 0);
  return ds;
}

}  // namespace

TEST_CASE("gen-data writes a dataset and a manifest") {
  const auto root = fresh_dir("relnet_cli_gen");
  const auto ds = small_dataset(root);
  CHECK(read_annotations(ds / "annotations.json").size() == 8);
  CHECK(read_folds(ds / "folds").size() == 2);
  const json m = read_json(ds / "manifest.json");
  CHECK(m["command"] == "gen-data");
  CHECK(m["config"].get<std::string>().find("count = 8") != std::string::npos);
  CHECK(m["seed"].is_number());
}

TEST_CASE("eval of ground truth used as detections is perfect") {
  const auto root = fresh_dir("relnet_cli_eval");
  const auto ds = small_dataset(root);
  const auto entries = read_annotations(ds / "annotations.json");
  std::vector<ScoredBox> dets;
  for (const auto& e : entries) {
    for (std::size_t i = 0; i < e.landmarks.size(); ++i) {
      const auto& p = e.landmarks.points[i];
      const auto& b = e.landmarks.boxes[i];
      dets.push_back({e.id, Detection{p.x(), p.y(), b.w, b.h, 1.0}});
    }
  }
  write_detections(root / "dets.json", dets);
  REQUIRE(cli_dispatch({"relnet", "eval", "--dets", (root / "dets.json").string(), "--gt",
                        (ds / "annotations.json").string(), "--folds", (ds / "folds").string()}) == 0);
  const json m = read_json(root / "eval" / "metrics.json");
  CHECK(m["ap"].get<double>() == doctest::Approx(1.0));
  CHECK(m["ap50"].get<double>() == doctest::Approx(1.0));
  CHECK(m["recall"].get<double>() == doctest::Approx(1.0));
  CHECK(m["per_fold"].size() == 2);
  CHECK(fs::exists(root / "eval" / "manifest.json"));
}

TEST_CASE("train, infer, boundary and relmap produce their outputs") {
  const auto root = fresh_dir("relnet_cli_pipeline");
  const auto ds = small_dataset(root);
  write_text(root / "train.txt",
             "epochs_per_step = 1\nbatch = 4\nstem_width = 8\nmid_width = 8\nwidth = 16\nres_blocks = 1\n"
             "head_width = 8\ncrop_size = 64\n");
  const fs::path run = root / "run";
  REQUIRE(cli_dispatch({"relnet", "train", "--config", (root / "train.txt").string(), "--dataset", ds.string(),
                        "--out", run.string(), "--val-fold", "1", "--seed", "3"}) == 0);
  for (const char* f : {"config.txt", "loss_log.jsonl", "metrics.json", "manifest.json", "detector", "gce", "phase3"}) {
    CHECK_MESSAGE(fs::exists(run / f), f);
  }
  CHECK(read_json(run / "manifest.json")["seed"] == 3);

  const fs::path inf = root / "inf";
  REQUIRE(cli_dispatch({"relnet", "infer", "--ckpt", run.string(), "--images", (ds / "images").string(), "--out",
                        inf.string(), "--topk", "5"}) == 0);
  const auto dets = read_detections(inf / "detections.json");
  CHECK(dets.size() == 8 * 5);
  CHECK(read_json(inf / "manifest.json")["timing"]["ms_per_image_mean"].get<double>() > 0.0);
  CHECK(std::distance(fs::directory_iterator(inf / "overlays"), fs::directory_iterator{}) == 8);

  REQUIRE(cli_dispatch({"relnet", "eval", "--dets", (inf / "detections.json").string(), "--gt",
                        (ds / "annotations.json").string()}) == 0);
  CHECK(read_json(inf / "eval" / "metrics.json")["ms_per_image"].is_number());

  REQUIRE(cli_dispatch({"relnet", "boundary", "--ckpt", (run / "detector").string(), "--images",
                        (ds / "images").string(), "--out", (root / "bd").string()}) == 0);
  CHECK(read_json(root / "bd" / "polylines.json").size() == 8);

  REQUIRE(cli_dispatch({"relnet", "relmap", "--dataset", ds.string(), "--out", (root / "rm").string()}) == 0);
  CHECK(fs::exists(root / "rm" / "000000.png"));
}

TEST_CASE("errors exit nonzero") {
  const auto root = fresh_dir("relnet_cli_errors");
  const auto ds = small_dataset(root);
  write_text(root / "bad.txt", "bogus = 1\n");
  CHECK(cli_dispatch({"relnet", "gen-data", "--config", (root / "bad.txt").string(), "--out", (root / "x").string()}) != 0);
  CHECK(cli_dispatch({"relnet", "train", "--config", (root / "bad.txt").string(), "--dataset", ds.string(), "--out",
                      (root / "y").string()}) != 0);
  CHECK(cli_dispatch({"relnet", "eval", "--gt", (ds / "annotations.json").string()}) != 0);
  CHECK(cli_dispatch({"relnet", "infer", "--ckpt", (root / "nope").string(), "--images", (ds / "images").string(),
                      "--out", (root / "z").string()}) != 0);

  write_detections(root / "dets.json", {{9999, Detection{1, 1, 2, 2, 0.5}}});
  CHECK(cli_dispatch({"relnet", "eval", "--dets", (root / "dets.json").string(), "--gt",
                      (ds / "annotations.json").string()}) != 0);
  CHECK(cli_dispatch({"relnet"}) != 0);
}
