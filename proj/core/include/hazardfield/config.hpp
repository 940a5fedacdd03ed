#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace hazardfield {

/// Flat key-value configuration: one `key = value` per line, '#' comments.
/// Command-line flags override file keys override built-in defaults; the
/// resolved values are echoed into the run manifest.
class Config {
 public:
  Config() = default;
  static Config from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const;

  /// Every key that was set plus every resolved default that was queried;
  /// this is what the manifest echoes.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::string lookup(const std::string& key, const std::string& fallback) const;

  std::map<std::string, std::string> entries_;
  mutable std::map<std::string, std::string> resolved_;
};

}  // namespace hazardfield
