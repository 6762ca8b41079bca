/* Copyright 2026 The HAL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef HAL_CONFIG_HPP_
#define HAL_CONFIG_HPP_

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hal/common.hpp"

namespace hal {

// Plain-text key=value configuration. '#' starts a comment. Keys read during
// the run are tracked so unknown keys can be rejected afterwards.
class Config {
 public:
  Config() = default;

  static Config parse_file(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), "cannot open config file: ", path);
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      cfg.parse_line(line, str_cat(path, ":", lineno));
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  // "key=value" from the command line.
  void set_override(const std::string& assignment) {
    auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, "override must look like key=value, got: ", assignment);
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    touched_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }

  std::string require_string(const std::string& key) const {
    touched_.insert(key);
    auto it = kv_.find(key);
    require(it != kv_.end(), "missing required config key: ", key);
    return it->second;
  }

  int64_t get_int(const std::string& key, int64_t dflt) const {
    touched_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      return std::stoll(it->second);
    } catch (...) {
      fail("config key ", key, " is not an integer: ", it->second);
    }
  }

  double get_double(const std::string& key, double dflt) const {
    touched_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      return std::stod(it->second);
    } catch (...) {
      fail("config key ", key, " is not a number: ", it->second);
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    std::string v = get_string(key, dflt ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("config key ", key, " is not a boolean: ", v);
  }

  std::vector<int> get_int_list(const std::string& key, std::vector<int> dflt) const {
    touched_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    std::vector<int> out;
    std::string cur;
    for (char c : it->second + ",") {
      if (c == ',') {
        if (!cur.empty()) out.push_back(std::stoi(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    return out;
  }

  // Every stored key must have been read by now; typos fail loudly.
  void reject_unknown_keys() const {
    for (const auto& [k, v] : kv_)
      require(touched_.count(k) > 0, "unknown config key: ", k, " (value ", v, ")");
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

  void write_file(const std::string& path) const {
    std::ofstream os(path);
    require(bool(os), "cannot write config/manifest: ", path);
    for (const auto& [k, v] : kv_) os << k << "=" << v << "\n";
  }

 private:
  void parse_line(const std::string& raw, const std::string& where) {
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) return;
    size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    auto eq = line.find('=');
    require(eq != std::string::npos && eq > 0, "expected key=value at ", where, ": ", raw);
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    size_t v0 = value.find_first_not_of(" \t");
    value = v0 == std::string::npos ? "" : value.substr(v0);
    kv_[key] = value;
  }

  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> touched_;
};

}  // namespace hal

#endif  // HAL_CONFIG_HPP_
