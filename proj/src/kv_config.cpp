#include "relnet/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace relnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(source + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key)) {
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": field '" + key + "' given twice");
    }
    cfg.values_[key] = value;
    cfg.lines_[key] = lineno;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::fail(const std::string& key, const std::string& what) const {
  auto it = lines_.find(key);
  const std::string where = it == lines_.end() ? source_ : source_ + ":" + std::to_string(it->second);
  throw std::runtime_error(where + ": field '" + key + "' " + what);
}

const std::string* KeyValueConfig::find(const std::string& key) {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

double KeyValueConfig::get(const std::string& key, double fallback) {
  const std::string* v = find(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    fail(key, "expects a number, got '" + *v + "'");
  }
}

int KeyValueConfig::get(const std::string& key, int fallback) {
  const std::string* v = find(key);
  if (!v) return fallback;
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) fail(key, "expects an integer, got '" + *v + "'");
  return out;
}

std::uint64_t KeyValueConfig::get(const std::string& key, std::uint64_t fallback) {
  const std::string* v = find(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) fail(key, "expects a non-negative integer, got '" + *v + "'");
  return out;
}

bool KeyValueConfig::get(const std::string& key, bool fallback) {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  fail(key, "expects true or false, got '" + *v + "'");
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

void KeyValueConfig::reject_unknown() const {
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) fail(key, "is not a known setting");
  }
}

}  // namespace relnet
