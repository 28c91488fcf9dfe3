#pragma once

// Flat "key = value" configuration files. '#' starts a comment. List values
// are comma separated. Every lookup marks its key as used so callers can
// reject typos with require_all_used().

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "evtraj/errors.hpp"

namespace evtraj {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("config line " + std::to_string(number) + ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    return to_double(key, it->second);
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    return to_int(key, it->second);
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(key + ": must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
  }

  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    std::vector<double> out;
    for (const auto& item : split(it->second)) out.push_back(to_double(key, item));
    return out;
  }

  std::vector<std::int64_t> get_ints(const std::string& key, const std::vector<std::int64_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    used_.insert(key);
    std::vector<std::int64_t> out;
    for (const auto& item : split(it->second)) out.push_back(to_int(key, item));
    return out;
  }

  /// Throws ConfigError naming every key that no loader asked for.
  void require_all_used() const {
    std::string unknown;
    for (const auto& [key, value] : values_)
      if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static double to_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0') throw ConfigError(key + ": expected a number, got '" + v + "'");
    return d;
  }

  static std::int64_t to_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long i = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0') throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return static_cast<std::int64_t>(i);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace evtraj
