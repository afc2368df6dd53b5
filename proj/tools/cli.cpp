#include "cli.hpp"

#include "relnet/dataset.hpp"
#include "relnet/evaluation.hpp"
#include "relnet/image_io.hpp"
#include "relnet/synthetic_scenes.hpp"
#include "relnet/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#ifndef RELNET_VERSION
#define RELNET_VERSION "unknown"
#endif

namespace relnet {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// RELNET_THREADS, default 1.
int thread_count() {
  const char* env = std::getenv("RELNET_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw std::runtime_error(std::string("RELNET_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(n);
}

/// Calls f(i) for i in [0, n) on up to RELNET_THREADS workers. Results must
/// be written to per-index slots so output order does not depend on timing.
template <typename F>
void parallel_for(std::size_t n, F f) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// One per command invocation, written next to its outputs. Holds the full
/// argument vector and the text of any config file read.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::optional<fs::path> config_path;
  std::string config_text;
  std::optional<std::uint64_t> seed;
  std::string started_at = utc_now();
  std::vector<std::string> outputs;
  json extra = json::object();

  void write(const fs::path& dir) const {
    json j = {{"command", command},
              {"argv", argv},
              {"version", RELNET_VERSION},
              {"threads", thread_count()},
              {"started_at", started_at},
              {"finished_at", utc_now()},
              {"outputs", outputs}};
    j["config_path"] = config_path ? json(config_path->string()) : json(nullptr);
    j["config"] = config_text;
    j["seed"] = seed ? json(*seed) : json(nullptr);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << "\n";
  }
};

KeyValueConfig load_config(const std::optional<fs::path>& path, RunManifest& m) {
  if (!path) return KeyValueConfig::parse("", "<defaults>");
  m.config_path = fs::absolute(*path);
  m.config_text = slurp(*path);
  return KeyValueConfig::parse(m.config_text, path->string());
}

struct GenSettings {
  SceneConfig scene;
  int count = 250;
  int folds = 5;
};

GenSettings gen_settings(KeyValueConfig& kv) {
  GenSettings g;
  const std::string preset = kv.get("preset", std::string("easy"));
  if (preset == "easy") {
    g.scene = SceneConfig::easy();
  } else if (preset == "hard") {
    g.scene = SceneConfig::hard();
  } else {
    throw std::runtime_error(kv.source() + ": field 'preset' must be easy or hard, got '" + preset + "'");
  }
  auto& s = g.scene;
  s.image_size = kv.get("image_size", s.image_size);
  s.n_min = kv.get("n_min", s.n_min);
  s.n_max = kv.get("n_max", s.n_max);
  s.control_points = kv.get("control_points", s.control_points);
  s.smoothness = kv.get("smoothness", s.smoothness);
  s.radius_min = kv.get("radius_min", s.radius_min);
  s.radius_max = kv.get("radius_max", s.radius_max);
  s.occlusion_frac = kv.get("occlusion_frac", s.occlusion_frac);
  s.specular_count = kv.get("specular_count", s.specular_count);
  s.blur_sigma = kv.get("blur_sigma", s.blur_sigma);
  s.seed = kv.get("seed", s.seed);
  g.count = kv.get("count", g.count);
  g.folds = kv.get("folds", g.folds);
  kv.reject_unknown();
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(kv.source() + ": " + e.what());
  }
  if (g.count < 1) throw std::runtime_error(kv.source() + ": field 'count' must be >= 1");
  if (g.folds < 1 || g.folds > g.count) throw std::runtime_error(kv.source() + ": field 'folds' must be in [1, count]");
  return g;
}

struct LoadedDetector {
  Detector<float> net;
  ParamStore<float> params;
};

/// Accepts a detector checkpoint directory or a training output directory.
/// The architecture comes from the nearest config.txt above the checkpoint.
LoadedDetector load_detector(const fs::path& path) {
  fs::path dir = path;
  if (!fs::exists(dir / "manifest.txt") && fs::exists(dir / "detector" / "manifest.txt")) dir = dir / "detector";
  if (!fs::exists(dir / "manifest.txt")) throw std::runtime_error(path.string() + ": no detector checkpoint found");
  DetectorConfig arch;
  for (fs::path p = fs::absolute(dir); !p.empty() && p != p.root_path(); p = p.parent_path()) {
    if (fs::exists(p / "config.txt")) {
      auto kv = KeyValueConfig::load(p / "config.txt");
      arch = TrainConfig::from_kv(kv).detector;
      break;
    }
    if (p.parent_path() == p) break;
  }
  LoadedDetector d{Detector<float>(arch), load_checkpoint(dir, "detector")};
  try {
    d.net.check_params(d.params);
  } catch (const std::exception& e) {
    throw std::runtime_error(dir.string() + ": " + e.what());
  }
  return d;
}

/// Zero-pads right and bottom to a multiple of the detector stride.
Image pad_for_detector(const Image& img) {
  const int m = DetectorConfig::kDownsample;
  const int w = (img.width + m - 1) / m * m;
  const int h = (img.height + m - 1) / m * m;
  if (w == img.width && h == img.height) return img;
  Image out(img.channels, h, w);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) out(c, y, x) = img(c, y, x);
    }
  }
  return out;
}

/// Numeric file stems (dataset layout) are image ids; otherwise the position
/// in sorted order.
int image_id_for(const fs::path& file, std::size_t index) {
  const std::string stem = file.stem().string();
  if (!stem.empty() && stem.size() < 10 && std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::stoi(stem);
  }
  return static_cast<int>(index);
}

std::vector<fs::path> require_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + ": not a directory");
  auto files = list_images(dir);
  if (files.empty()) throw std::runtime_error(dir.string() + ": no .png images");
  return files;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- commands

void cmd_gen_data(RunManifest& m, const std::optional<fs::path>& config, const fs::path& out,
                  const std::optional<std::uint64_t>& seed) {
  auto kv = load_config(config, m);
  GenSettings g = gen_settings(kv);
  if (seed) g.scene.seed = *seed;
  m.seed = g.scene.seed;
  generate_dataset(g.scene, g.count, g.folds, out);
  m.outputs = {(out / "images").string(), (out / "annotations.json").string(), (out / "folds").string()};
  m.extra["count"] = g.count;
  m.extra["folds"] = g.folds;
  m.write(out);
  std::cout << "wrote " << g.count << " images and " << g.folds << " folds to " << out.string() << "\n";
}

void cmd_relmap(RunManifest& m, const fs::path& dataset, const fs::path& out) {
  const auto entries = read_annotations(dataset / "annotations.json");
  fs::create_directories(out);
  std::vector<std::string> written(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    const auto& e = entries[i];
    const GridSpec grid{e.width, e.height, DetectorConfig::kDownsample};
    TargetMaps t;
    try {
      t = encode_targets(e.landmarks, grid);
    } catch (const std::exception& ex) {
      throw std::runtime_error((dataset / "annotations.json").string() + ": image " + std::to_string(e.id) + ": " + ex.what());
    }
    const fs::path file = out / (fs::path(e.file).stem().string() + ".png");
    write_png_gray16(file, t.r_map);
    written[i] = file.string();
  });
  m.outputs = written;
  m.write(out);
  std::cout << "wrote " << entries.size() << " relation maps to " << out.string() << "\n";
}

void cmd_train(RunManifest& m, const std::optional<fs::path>& config, const fs::path& dataset, const fs::path& out,
               const std::optional<double>& alpha_r, const std::optional<double>& alpha_e,
               const std::optional<std::uint64_t>& seed, const std::optional<int>& val_fold) {
  auto kv = load_config(config, m);
  TrainConfig cfg = TrainConfig::from_kv(kv);
  kv.reject_unknown();
  if (alpha_r) cfg.weights.alpha_r = *alpha_r;
  if (alpha_e) cfg.weights.alpha_e = *alpha_e;
  if (seed) cfg.seed = *seed;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(kv.source() + ": " + e.what());
  }
  m.seed = cfg.seed;

  const auto images = load_dataset(dataset);
  if (images.empty()) throw std::runtime_error((dataset / "annotations.json").string() + ": no images");
  std::vector<int> held_out;
  if (val_fold) held_out = read_fold(dataset / "folds" / ("fold_" + std::to_string(*val_fold) + ".txt"));
  std::vector<Sample> train, val;
  for (const auto& im : images) {
    const bool is_val = std::find(held_out.begin(), held_out.end(), im.id) != held_out.end();
    (is_val ? val : train).push_back({im.image, im.landmarks});
  }
  if (train.empty()) throw std::runtime_error("train: no training images left after holding out the validation fold");

  fs::create_directories(out);
  {
    std::ofstream c(out / "config.txt", std::ios::binary);
    c << cfg.to_kv();
  }
  TrainOptions opts;
  opts.out_dir = out;
  opts.progress = [](const std::string& line) { std::cerr << line << "\n"; };
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = run_training(train, cfg, opts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  m.outputs = {(out / "config.txt").string(), (out / "loss_log.jsonl").string(), (out / "detector").string(),
               (out / "gce").string()};
  for (int p = 1; p <= 3; ++p) m.outputs.push_back((out / ("phase" + std::to_string(p))).string());
  m.extra["train_images"] = train.size();
  m.extra["detector_updates"] = res.detector_updates;
  m.extra["gce_updates"] = res.gce_updates;
  m.extra["seconds"] = seconds;
  if (!val.empty()) {
    const Detector<float> net(cfg.detector);
    const MetricsReport rep = evaluate_detector(net, res.detector, val);
    std::ofstream mj(out / "metrics.json", std::ios::binary);
    mj << metrics_to_json(rep) << "\n";
    m.outputs.push_back((out / "metrics.json").string());
    m.extra["val_fold"] = *val_fold;
    m.extra["val_images"] = val.size();
    std::cout << metrics_table(rep, "val fold " + std::to_string(*val_fold));
  }
  m.write(out);
  std::cout << "trained " << res.detector_updates << " detector and " << res.gce_updates << " evaluator updates in "
            << static_cast<long>(seconds) << " s; checkpoints in " << out.string() << "\n";
}

struct InferredImage {
  fs::path file;
  int id = 0;
  Image image;
  std::vector<Detection> dets;
  double ms = 0.0;
};

std::vector<InferredImage> run_inference(const fs::path& ckpt, const fs::path& images_dir, int top_k) {
  if (top_k < 1) throw std::runtime_error("--topk must be >= 1");
  const LoadedDetector det = load_detector(ckpt);
  const auto files = require_images(images_dir);
  std::vector<InferredImage> res(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    auto& r = res[i];
    r.file = files[i];
    r.id = image_id_for(files[i], i);
    r.image = read_png(files[i]);
    const auto t0 = std::chrono::steady_clock::now();
    const Image input = pad_for_detector(r.image);
    r.dets = detect(det.net, det.params, input, top_k);
    r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  });
  return res;
}

void cmd_infer(RunManifest& m, const fs::path& ckpt, const fs::path& images, const fs::path& out, double conf,
               int top_k) {
  const auto res = run_inference(ckpt, images, top_k);
  fs::create_directories(out / "overlays");
  std::vector<ScoredBox> all;
  std::vector<double> times;
  for (const auto& r : res) {
    Image overlay = r.image;
    for (const auto& d : r.dets) {
      all.push_back({r.id, d});
      if (d.score >= conf) draw_rect(overlay, d.cx - d.w / 2, d.cy - d.h / 2, d.cx + d.w / 2, d.cy + d.h / 2, {1.0f, 0.0f, 0.0f});
    }
    write_png_rgb(out / "overlays" / r.file.filename(), overlay);
    times.push_back(r.ms);
  }
  write_detections(out / "detections.json", all);
  double mean = 0.0;
  for (double t : times) mean += t / static_cast<double>(times.size());
  m.outputs = {(out / "detections.json").string(), (out / "overlays").string()};
  m.extra["checkpoint"] = fs::absolute(ckpt).string();
  m.extra["conf"] = conf;
  m.extra["topk"] = top_k;
  m.extra["timing"] = {{"ms_per_image_mean", mean}, {"ms_per_image_median", median(times)}, {"images", times.size()}};
  m.write(out);
  std::printf("%zu images, %.2f ms/image (pre-process + forward + decode), detections in %s\n", times.size(), mean,
              (out / "detections.json").string().c_str());
}

void cmd_boundary(RunManifest& m, const fs::path& ckpt, const fs::path& images, const fs::path& out, double conf,
                  int top_k) {
  const auto res = run_inference(ckpt, images, top_k);
  fs::create_directories(out / "overlays");
  json polylines = json::array();
  for (const auto& r : res) {
    const auto line = boundary_polyline(r.dets, conf);
    Image overlay = r.image;
    const Rgb yellow = {1.0f, 1.0f, 0.0f};
    for (std::size_t k = 1; k < line.size(); ++k) draw_line(overlay, line[k - 1], line[k], yellow);
    for (const auto& p : line) draw_rect(overlay, p.x() - 1, p.y() - 1, p.x() + 1, p.y() + 1, yellow);
    write_png_rgb(out / "overlays" / r.file.filename(), overlay);
    json pts = json::array();
    for (const auto& p : line) pts.push_back({p.x(), p.y()});
    polylines.push_back({{"image_id", r.id}, {"file", r.file.filename().string()}, {"points", pts}});
  }
  std::ofstream pj(out / "polylines.json", std::ios::binary);
  pj << polylines.dump(1) << "\n";
  m.outputs = {(out / "polylines.json").string(), (out / "overlays").string()};
  m.extra["checkpoint"] = fs::absolute(ckpt).string();
  m.extra["conf"] = conf;
  m.write(out);
  std::cout << "wrote " << res.size() << " boundary overlays to " << (out / "overlays").string() << "\n";
}

void cmd_eval(RunManifest& m, const fs::path& dets_path, const fs::path& gt_path, const std::optional<fs::path>& folds_path,
              const std::optional<fs::path>& out_opt, const std::string& label) {
  const auto gt = read_annotations(gt_path);
  const auto dets = read_detections(dets_path);
  std::vector<ImageEval> images;
  std::map<int, std::size_t> slot;
  for (const auto& e : gt) {
    slot[e.id] = images.size();
    images.push_back({e.id, {}, to_boxes(e.landmarks)});
  }
  for (const auto& d : dets) {
    auto it = slot.find(d.image_id);
    if (it == slot.end()) {
      throw std::runtime_error(dets_path.string() + ": field 'image_id' " + std::to_string(d.image_id) +
                               " is not in " + gt_path.string());
    }
    images[it->second].dets.push_back(d.det);
  }
  MetricsReport rep;
  if (folds_path) {
    const auto folds = fs::is_directory(*folds_path) ? read_folds(*folds_path) : std::vector<std::vector<int>>{read_fold(*folds_path)};
    if (folds.empty()) throw std::runtime_error(folds_path->string() + ": no fold manifests");
    rep = evaluate(images, folds);
  } else {
    rep = evaluate(images);
  }
  // reuse the timing of the inference run that produced the detections
  const fs::path infer_manifest = dets_path.parent_path() / "manifest.json";
  if (fs::exists(infer_manifest)) {
    try {
      const json j = json::parse(slurp(infer_manifest));
      if (j.contains("timing")) rep.ms_per_image = j["timing"]["ms_per_image_mean"].get<double>();
    } catch (const std::exception&) {
    }
  }
  const fs::path out = out_opt ? *out_opt : dets_path.parent_path() / "eval";
  fs::create_directories(out);
  std::ofstream mj(out / "metrics.json", std::ios::binary);
  mj << metrics_to_json(rep) << "\n";
  mj.close();
  m.outputs = {(out / "metrics.json").string()};
  m.extra["dets"] = fs::absolute(dets_path).string();
  m.extra["gt"] = fs::absolute(gt_path).string();
  if (folds_path) m.extra["folds"] = fs::absolute(*folds_path).string();
  m.write(out);
  std::cout << metrics_table(rep, label);
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"Landmark detection with relation-aware regularisation"};
  app.name("relnet");
  app.require_subcommand(1);
  app.set_version_flag("--version", RELNET_VERSION);

  RunManifest m;
  for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);

  std::optional<fs::path> config, folds, eval_out;
  fs::path out, dataset, ckpt, images, dets, gt;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha_r, alpha_e;
  std::optional<int> val_fold;
  double conf = 0.1;
  double boundary_conf = 0.2;
  int top_k = 20;
  std::string label = "model";

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Scene settings (key = value)")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Overrides the config seed");

  auto* rel = app.add_subcommand("relmap", "Export ground-truth relation heatmaps as 16-bit PNG");
  rel->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  rel->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Three-phase training");
  train->add_option("--config", config, "Training settings (key = value)")->check(CLI::ExistingFile);
  train->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--alpha-r", alpha_r, "Relation heatmap weight (0 disables the pixel-level term)");
  train->add_option("--alpha-e", alpha_e, "Adversarial weight (0 disables the global-level term)");
  train->add_option("--seed", seed, "Overrides the config seed");
  train->add_option("--val-fold", val_fold, "Hold out DATASET/folds/fold_K.txt and report metrics on it");

  auto* infer = app.add_subcommand("infer", "Detect landmarks; writes detections.json and red-box overlays");
  infer->add_option("--ckpt", ckpt, "Detector checkpoint or training output directory")->required();
  infer->add_option("--images", images, "Directory of PNG images")->required();
  infer->add_option("--out", out, "Output directory")->required();
  infer->add_option("--conf", conf, "Overlay score threshold; detections.json keeps all top-k")->capture_default_str();
  infer->add_option("--topk", top_k, "Peaks kept per image")->capture_default_str();

  auto* boundary = app.add_subcommand("boundary", "Draw the landmark polyline in yellow");
  boundary->add_option("--ckpt", ckpt, "Detector checkpoint or training output directory")->required();
  boundary->add_option("--images", images, "Directory of PNG images")->required();
  boundary->add_option("--out", out, "Output directory")->required();
  boundary->add_option("--conf", boundary_conf, "Score threshold for polyline vertices")->capture_default_str();
  boundary->add_option("--topk", top_k, "Peaks kept per image")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "AP, AP50 and recall of a detections file");
  eval->add_option("--dets", dets, "Detections document")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gt, "Annotation document")->required()->check(CLI::ExistingFile);
  eval->add_option("--folds", folds, "Fold manifest, or a directory of fold_k.txt")->check(CLI::ExistingPath);
  eval->add_option("--out", eval_out, "Output directory (default: DETS_DIR/eval)");
  eval->add_option("--label", label, "Row label in the printed table")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string name = app.get_subcommands().front()->get_name();
  m.command = name;
  try {
    if (name == "gen-data") {
      cmd_gen_data(m, config, out, seed);
    } else if (name == "relmap") {
      cmd_relmap(m, dataset, out);
    } else if (name == "train") {
      cmd_train(m, config, dataset, out, alpha_r, alpha_e, seed, val_fold);
    } else if (name == "infer") {
      cmd_infer(m, ckpt, images, out, conf, top_k);
    } else if (name == "boundary") {
      cmd_boundary(m, ckpt, images, out, boundary_conf, top_k);
    } else if (name == "eval") {
      cmd_eval(m, dets, gt, folds, eval_out, label);
    }
  } catch (const std::exception& e) {
    std::cerr << "relnet " << name << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace relnet
