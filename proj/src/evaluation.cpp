#include "relnet/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace relnet {

using nlohmann::json;

Box to_box(const Detection& d) { return {d.cx - d.w / 2, d.cy - d.h / 2, d.w, d.h}; }

std::vector<Box> to_boxes(const LandmarkSet& landmarks) {
  std::vector<Box> out;
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const BoxSize b = landmarks.has_boxes() ? landmarks.boxes[i] : BoxSize{};
    out.push_back({landmarks.points[i].x() - b.w / 2, landmarks.points[i].y() - b.h / 2, b.w, b.h});
  }
  return out;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double ih = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts, double iou_thresh) {
  std::vector<bool> taken(gts.size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    const Box db = to_box(dets[d]);
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(db, gts[g]);
      if (v >= iou_thresh && v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      taken[best_g] = true;
      tp[d] = true;
    }
  }
  return tp;
}

namespace {

std::vector<Detection> sorted_by_score(std::vector<Detection> dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return dets;
}

struct Ranked {
  double score;
  int image_id;
  std::size_t index;
  bool tp;
};

std::size_t total_gt(const std::vector<ImageEval>& images) {
  std::size_t n = 0;
  for (const auto& im : images) n += im.gts.size();
  return n;
}

}  // namespace

std::optional<double> average_precision(const std::vector<ImageEval>& images, double iou_thresh) {
  const std::size_t n_gt = total_gt(images);
  if (n_gt == 0) return std::nullopt;
  std::vector<Ranked> ranked;
  for (const auto& im : images) {
    const auto dets = sorted_by_score(im.dets);
    const auto flags = match_detections(dets, im.gts, iou_thresh);
    for (std::size_t i = 0; i < dets.size(); ++i) ranked.push_back({dets[i].score, im.image_id, i, flags[i]});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.index < b.index;
  });

  std::vector<double> recall(ranked.size());
  std::vector<double> precision(ranked.size());
  double tp = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].tp) tp += 1.0;
    recall[i] = tp / static_cast<double>(n_gt);
    precision[i] = tp / static_cast<double>(i + 1);
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  for (int t = 0; t < kRecallPoints; ++t) {
    const double r = t / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / kRecallPoints;
}

std::optional<double> ap_coco(const std::vector<ImageEval>& images) {
  if (total_gt(images) == 0) return std::nullopt;
  double sum = 0.0;
  for (int k = 0; k < 10; ++k) sum += *average_precision(images, 0.5 + 0.05 * k);
  return sum / 10.0;
}

std::optional<double> recall_at(const std::vector<ImageEval>& images, double conf_thresh, double iou_thresh) {
  const std::size_t n_gt = total_gt(images);
  if (n_gt == 0) return std::nullopt;
  std::size_t matched = 0;
  for (const auto& im : images) {
    std::vector<Detection> kept;
    for (const auto& d : im.dets) {
      if (d.score >= conf_thresh) kept.push_back(d);
    }
    const auto flags = match_detections(sorted_by_score(std::move(kept)), im.gts, iou_thresh);
    matched += static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  }
  return static_cast<double>(matched) / static_cast<double>(n_gt);
}

MetricsReport evaluate(const std::vector<ImageEval>& images) {
  MetricsReport r;
  r.ap = ap_coco(images);
  r.ap50 = average_precision(images, 0.5);
  r.recall = recall_at(images);
  r.num_images = static_cast<int>(images.size());
  r.num_gt = static_cast<int>(total_gt(images));
  for (const auto& im : images) r.num_det += static_cast<int>(im.dets.size());
  return r;
}

MetricsReport evaluate(const std::vector<ImageEval>& images, const std::vector<std::vector<int>>& folds) {
  MetricsReport r = evaluate(images);
  std::map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < images.size(); ++i) by_id[images[i].image_id] = i;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    std::vector<ImageEval> subset;
    for (int id : folds[k]) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw std::runtime_error("fold " + std::to_string(k) + ": unknown image id " + std::to_string(id));
      subset.push_back(images[it->second]);
    }
    const MetricsReport f = evaluate(subset);
    r.per_fold.push_back({static_cast<int>(k), f.ap, f.ap50, f.recall, f.num_images, f.num_gt, f.num_det});
  }
  return r;
}

namespace {

void put(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string pct(const std::optional<double>& v) { return v ? fixed2(100.0 * *v) : "-"; }

}  // namespace

std::string metrics_to_json(const MetricsReport& report) {
  json j;
  put(j, "ap", report.ap);
  put(j, "ap50", report.ap50);
  put(j, "recall", report.recall);
  put(j, "ms_per_image", report.ms_per_image);
  j["num_images"] = report.num_images;
  j["num_gt"] = report.num_gt;
  j["num_det"] = report.num_det;
  if (!report.per_fold.empty()) {
    json folds = json::array();
    for (const auto& f : report.per_fold) {
      json fj = {{"fold", f.fold}, {"num_images", f.num_images}, {"num_gt", f.num_gt}, {"num_det", f.num_det}};
      put(fj, "ap", f.ap);
      put(fj, "ap50", f.ap50);
      put(fj, "recall", f.recall);
      folds.push_back(fj);
    }
    j["per_fold"] = folds;
  }
  return j.dump(2) + "\n";
}

std::string metrics_table(const MetricsReport& report, const std::string& label) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof(line), "%-16s %10s %8s %8s %8s\n", "Method", "Speed(ms)", "Recall", "AP", "AP50");
  out += line;
  const std::string speed = report.ms_per_image ? fixed2(*report.ms_per_image) : "-";
  std::snprintf(line, sizeof(line), "%-16s %10s %8s %8s %8s\n", label.c_str(), speed.c_str(), pct(report.recall).c_str(),
                pct(report.ap).c_str(), pct(report.ap50).c_str());
  out += line;
  for (const auto& f : report.per_fold) {
    const std::string name = "  fold " + std::to_string(f.fold);
    std::snprintf(line, sizeof(line), "%-16s %10s %8s %8s %8s\n", name.c_str(), "", pct(f.recall).c_str(),
                  pct(f.ap).c_str(), pct(f.ap50).c_str());
    out += line;
  }
  return out;
}

void write_detections(const std::filesystem::path& path, const std::vector<ScoredBox>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    const Box b = to_box(d.det);
    arr.push_back({{"image_id", d.image_id}, {"bbox", {b.x, b.y, b.w, b.h}}, {"score", d.det.score}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << arr.dump(1) << "\n";
}

std::vector<ScoredBox> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json arr;
  try {
    arr = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  if (!arr.is_array()) throw std::runtime_error(path.string() + ": expected an array of detections");
  std::vector<ScoredBox> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = path.string() + ": field '[" + std::to_string(i) + "].";
    const json& d = arr[i];
    if (!d.is_object() || !d.contains("image_id") || !d["image_id"].is_number_integer()) {
      throw std::runtime_error(where + "image_id' is missing or not an integer");
    }
    if (!d.contains("bbox") || !d["bbox"].is_array() || d["bbox"].size() != 4) {
      throw std::runtime_error(where + "bbox' must be [x, y, w, h]");
    }
    if (!d.contains("score") || !d["score"].is_number()) throw std::runtime_error(where + "score' must be a number");
    std::array<double, 4> b{};
    for (std::size_t k = 0; k < 4; ++k) {
      if (!d["bbox"][k].is_number()) throw std::runtime_error(where + "bbox' must hold numbers");
      b[k] = d["bbox"][k].get<double>();
    }
    out.push_back({d["image_id"].get<int>(), {b[0] + b[2] / 2, b[1] + b[3] / 2, b[2], b[3], d["score"].get<double>()}});
  }
  return out;
}

}  // namespace relnet
