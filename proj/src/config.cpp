#include "timepfn/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "timepfn/common.hpp"

namespace timepfn {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

ConfigMap ConfigMap::parse_string(const std::string& text,
                                  const std::string& origin) {
  ConfigMap cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError(origin + ":" + std::to_string(lineno) +
                         ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(lineno) +
                       ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.entries_[section + "." + key] = value;
  }
  return cfg;
}

bool ConfigMap::has(const std::string& section, const std::string& key) const {
  return entries_.count(section + "." + key) != 0;
}

std::string ConfigMap::get(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  auto it = entries_.find(section + "." + key);
  return it == entries_.end() ? fallback : it->second;
}

double ConfigMap::get_real(const std::string& section, const std::string& key,
                           double fallback) const {
  auto it = entries_.find(section + "." + key);
  if (it == entries_.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("config key " + it->first + ": not a real: " + it->second);
  }
}

std::int64_t ConfigMap::get_int(const std::string& section,
                                const std::string& key,
                                std::int64_t fallback) const {
  auto it = entries_.find(section + "." + key);
  if (it == entries_.end()) return fallback;
  try {
    size_t pos = 0;
    long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("config key " + it->first +
                     ": not an integer: " + it->second);
  }
}

bool ConfigMap::get_bool(const std::string& section, const std::string& key,
                         bool fallback) const {
  auto it = entries_.find(section + "." + key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ParseError("config key " + it->first + ": not a boolean: " + v);
}

std::vector<double> ConfigMap::get_real_list(
    const std::string& section, const std::string& key,
    const std::vector<double>& fallback) const {
  auto it = entries_.find(section + "." + key);
  if (it == entries_.end()) return fallback;
  std::vector<double> out;
  std::istringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ParseError("config key " + it->first + ": bad list item: " + item);
    }
  }
  return out;
}

}  // namespace timepfn
