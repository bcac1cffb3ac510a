#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fovea {

// Minimal INI: [section] headers, key = value lines, '#' or ';' comments.
// Keys are addressed as "section.key". Order is preserved for writing.
class IniFile {
 public:
  IniFile() = default;

  static IniFile parse(const std::string& text);
  static IniFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;  // throws if absent
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  long long get_i64(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback) const;

  void set(const std::string& key, const std::string& value);

  std::string dump() const;  // canonical text, stable ordering
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;  // full-key order
  std::map<std::string, std::size_t> index_;
};

// FNV-1a over a string; used for config digests.
std::string digest_hex(const std::string& text);

}  // namespace fovea
