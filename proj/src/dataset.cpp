#include "relnet/dataset.hpp"

#include "relnet/image_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace relnet {

using nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::filesystem::path& path, const std::string& field, const std::string& what) {
  throw std::runtime_error(path.string() + ": field '" + field + "' " + what);
}

const json& require(const json& obj, const char* key, const std::filesystem::path& path, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) bad_field(path, where + key, "is missing");
  return obj.at(key);
}

double number(const json& v, const std::filesystem::path& path, const std::string& field) {
  if (!v.is_number()) bad_field(path, field, "must be a number");
  return v.get<double>();
}

}  // namespace

std::string annotations_to_string(const std::vector<DatasetEntry>& entries) {
  json images = json::array();
  json annotations = json::array();
  for (const auto& e : entries) {
    images.push_back({{"id", e.id}, {"file", e.file}, {"width", e.width}, {"height", e.height},
                      {"n_occluded", e.n_occluded}});
    for (std::size_t i = 0; i < e.landmarks.size(); ++i) {
      const Point2& p = e.landmarks.points[i];
      const BoxSize b = e.landmarks.has_boxes() ? e.landmarks.boxes[i] : BoxSize{};
      annotations.push_back({{"image_id", e.id},
                             {"bbox", {p.x() - b.w / 2, p.y() - b.h / 2, b.w, b.h}},
                             {"center", {p.x(), p.y()}}});
    }
  }
  json doc = {{"images", images}, {"annotations", annotations}};
  return doc.dump(1) + "\n";
}

void write_annotations(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << annotations_to_string(entries);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<DatasetEntry> read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  const json& images = require(doc, "images", path, "");
  const json& anns = require(doc, "annotations", path, "");
  if (!images.is_array()) bad_field(path, "images", "must be an array");
  if (!anns.is_array()) bad_field(path, "annotations", "must be an array");

  std::vector<DatasetEntry> entries;
  std::map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "].";
    const json& im = images[i];
    DatasetEntry e;
    const json& id = require(im, "id", path, where);
    if (!id.is_number_integer()) bad_field(path, where + "id", "must be an integer");
    e.id = id.get<int>();
    const json& file = require(im, "file", path, where);
    if (!file.is_string()) bad_field(path, where + "file", "must be a string");
    e.file = file.get<std::string>();
    e.width = static_cast<int>(number(require(im, "width", path, where), path, where + "width"));
    e.height = static_cast<int>(number(require(im, "height", path, where), path, where + "height"));
    if (im.contains("n_occluded")) e.n_occluded = static_cast<int>(number(im["n_occluded"], path, where + "n_occluded"));
    if (by_id.count(e.id)) bad_field(path, where + "id", "is duplicated");
    by_id[e.id] = entries.size();
    entries.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "].";
    const json& a = anns[i];
    const int image_id = static_cast<int>(number(require(a, "image_id", path, where), path, where + "image_id"));
    auto it = by_id.find(image_id);
    if (it == by_id.end()) bad_field(path, where + "image_id", "refers to an unknown image");
    const json& bbox = require(a, "bbox", path, where);
    if (!bbox.is_array() || bbox.size() != 4) bad_field(path, where + "bbox", "must be [x, y, w, h]");
    std::array<double, 4> b{};
    for (std::size_t k = 0; k < 4; ++k) b[k] = number(bbox[k], path, where + "bbox");
    if (b[2] < 0 || b[3] < 0) bad_field(path, where + "bbox", "has negative size");
    Point2 center(b[0] + b[2] / 2, b[1] + b[3] / 2);
    if (a.contains("center")) {
      const json& c = a["center"];
      if (!c.is_array() || c.size() != 2) bad_field(path, where + "center", "must be [cx, cy]");
      center = Point2(number(c[0], path, where + "center"), number(c[1], path, where + "center"));
    }
    auto& lm = entries[it->second].landmarks;
    lm.points.push_back(center);
    lm.boxes.push_back({b[2], b[3]});
  }
  return entries;
}

void write_fold(const std::filesystem::path& path, const std::vector<int>& ids) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (int id : ids) out << id << "\n";
}

std::vector<int> read_fold(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<int> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    int id = 0;
    std::string rest;
    if (!(ss >> id) || (ss >> rest)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected one image id");
    }
    ids.push_back(id);
  }
  return ids;
}

std::vector<std::vector<int>> read_folds(const std::filesystem::path& dir) {
  std::vector<std::vector<int>> folds;
  for (int k = 0;; ++k) {
    const auto p = dir / ("fold_" + std::to_string(k) + ".txt");
    if (!std::filesystem::exists(p)) break;
    folds.push_back(read_fold(p));
  }
  if (folds.empty()) throw std::runtime_error("no fold manifests (fold_0.txt, ...) in " + dir.string());
  return folds;
}

std::vector<LabeledImage> load_dataset(const std::filesystem::path& dir) {
  const auto entries = read_annotations(dir / "annotations.json");
  std::vector<LabeledImage> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    LabeledImage li;
    li.id = e.id;
    li.file = e.file;
    li.image = read_png(dir / e.file);
    if (li.image.width != e.width || li.image.height != e.height) {
      throw std::runtime_error((dir / e.file).string() + ": size does not match annotations");
    }
    li.landmarks = e.landmarks;
    out.push_back(std::move(li));
  }
  return out;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    if (f.is_regular_file() && f.path().extension() == ".png") files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace relnet
