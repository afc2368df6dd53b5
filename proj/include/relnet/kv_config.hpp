#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace relnet {

/// Flat "key = value" document. '#' starts a comment; blank lines are
/// ignored. Typed getters record which keys were read so that leftovers can
/// be reported as unknown.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }
  [[nodiscard]] const std::string& source() const { return source_; }

  double get(const std::string& key, double fallback);
  int get(const std::string& key, int fallback);
  std::uint64_t get(const std::string& key, std::uint64_t fallback);
  bool get(const std::string& key, bool fallback);
  std::string get(const std::string& key, const std::string& fallback);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  /// Throws naming the first key that no getter asked for.
  void reject_unknown() const;

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;
  const std::string* find(const std::string& key);

  std::string source_;
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::set<std::string> used_;
};

}  // namespace relnet
