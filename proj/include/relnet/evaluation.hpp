#pragma once

#include "relnet/geometry.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace relnet {

/// Axis-aligned box, top-left corner plus size, in pixels.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

Box to_box(const Detection& d);
std::vector<Box> to_boxes(const LandmarkSet& landmarks);

double iou(const Box& a, const Box& b);

/// Greedy one-to-one matching; `dets` must be sorted by score, highest first.
/// A detection takes the unmatched ground truth of highest IoU when that IoU
/// is >= `iou_thresh`. Returns one TP flag per detection.
std::vector<bool> match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gts, double iou_thresh);

/// Detections and ground truth of one image.
struct ImageEval {
  int image_id = 0;
  std::vector<Detection> dets;
  std::vector<Box> gts;
};

inline constexpr int kRecallPoints = 101;

/// 101-point interpolated AP at one IoU threshold; absent without ground truth.
std::optional<double> average_precision(const std::vector<ImageEval>& images, double iou_thresh);
/// Mean AP over IoU 0.50, 0.55, ..., 0.95.
std::optional<double> ap_coco(const std::vector<ImageEval>& images);
/// Fraction of ground truths matched by detections scoring >= conf_thresh.
std::optional<double> recall_at(const std::vector<ImageEval>& images, double conf_thresh = 0.1,
                                double iou_thresh = 0.5);

struct FoldMetrics {
  int fold = 0;
  std::optional<double> ap;
  std::optional<double> ap50;
  std::optional<double> recall;
  int num_images = 0;
  int num_gt = 0;
  int num_det = 0;
};

struct MetricsReport {
  std::optional<double> ap;
  std::optional<double> ap50;
  std::optional<double> recall;
  int num_images = 0;
  int num_gt = 0;
  int num_det = 0;
  std::vector<FoldMetrics> per_fold;
  std::optional<double> ms_per_image;  // copied from inference timing when known
};

MetricsReport evaluate(const std::vector<ImageEval>& images);
/// Also fills per_fold; images are selected by id, unknown ids are an error.
MetricsReport evaluate(const std::vector<ImageEval>& images, const std::vector<std::vector<int>>& folds);

std::string metrics_to_json(const MetricsReport& report);
/// Fixed-width table with columns Speed, Recall, AP, AP50 (percent).
std::string metrics_table(const MetricsReport& report, const std::string& label = "model");

/// Detections document: [{image_id, bbox: [x, y, w, h], score}].
struct ScoredBox {
  int image_id = 0;
  Detection det;
};
void write_detections(const std::filesystem::path& path, const std::vector<ScoredBox>& dets);
std::vector<ScoredBox> read_detections(const std::filesystem::path& path);

}  // namespace relnet
