#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace timepfn {

// Plain key=value configuration with [section] headers. '#' and ';' start
// comments. Keys are addressed as "section.key"; keys before any section
// header live in the "" section.
class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap parse_file(const std::string& path);
  static ConfigMap parse_string(const std::string& text,
                                const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  double get_real(const std::string& section, const std::string& key,
                  double fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;
  // Comma-separated list of reals.
  std::vector<double> get_real_list(const std::string& section,
                                    const std::string& key,
                                    const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace timepfn
