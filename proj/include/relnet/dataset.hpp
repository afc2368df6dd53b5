#pragma once

#include "relnet/geometry.hpp"
#include "relnet/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace relnet {

/// One image record of an annotation document.
struct DatasetEntry {
  int id = 0;
  std::string file;  // relative to the dataset directory
  int width = 0;
  int height = 0;
  int n_occluded = 0;
  LandmarkSet landmarks;
};

/// Annotation document layout:
///   {"images": [{id, file, width, height, n_occluded}],
///    "annotations": [{image_id, bbox: [x, y, w, h], center: [cx, cy]}]}
/// Annotations of one image keep their order.
std::string annotations_to_string(const std::vector<DatasetEntry>& entries);
void write_annotations(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries);
/// Diagnostics name the file and the offending field.
std::vector<DatasetEntry> read_annotations(const std::filesystem::path& path);

/// Fold manifests are plain text, one image id per line.
void write_fold(const std::filesystem::path& path, const std::vector<int>& ids);
std::vector<int> read_fold(const std::filesystem::path& path);
/// Reads DIR/fold_0.txt, DIR/fold_1.txt, ... until the first missing index.
std::vector<std::vector<int>> read_folds(const std::filesystem::path& dir);

struct LabeledImage {
  int id = 0;
  std::string file;
  Image image;
  LandmarkSet landmarks;
};

/// Loads DIR/annotations.json and every referenced image.
std::vector<LabeledImage> load_dataset(const std::filesystem::path& dir);

/// Every *.png in `dir` (non-recursive), sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace relnet
