#pragma once

// Run configuration: `key = value` files plus `key=value` overrides, checked
// against a per-command schema. The resolved config is written beside outputs.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gazenav/common.hpp"
#include "gazenav/dataset.hpp"
#include "gazenav/io.hpp"

namespace gazenav::config {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

// Scenario keys shared by every command that rolls episodes.
inline std::vector<KeySpec> scenario_keys() {
  return {{"kind", "circle_crossing", "circle_crossing or replay"},
          {"replay_file", "", "trajectory file for replay scenes"},
          {"start_frame", "0", "first frame when random_start is false"},
          {"random_start", "true", "random start frame in replay scenes"},
          {"mirror", "false", "randomly mirror replay scenes"},
          {"n_humans", "5", "humans in circle crossing"},
          {"circle_radius", "4", "circle radius (m)"},
          {"robot_start", "0,-4", "robot start x,y in replay scenes"},
          {"robot_goal", "0,4", "robot goal x,y in replay scenes"},
          {"time_limit", "30", "episode time limit (s)"},
          {"human_radius", "0.3", "human radius (m)"},
          {"robot_radius", "0.3", "robot radius (m)"},
          {"v_pref", "1", "robot preferred speed (m/s)"},
          {"dt", "0.25", "simulation step (s)"},
          {"robot_visible", "true", "ORCA humans react to the robot"}};
}

class RunConfig {
 public:
  explicit RunConfig(std::vector<KeySpec> schema) : schema_(std::move(schema)) {
    for (const auto& k : schema_) values_[k.name] = k.default_value;
  }

  const std::vector<KeySpec>& schema() const { return schema_; }

  void set(const std::string& key, std::string value) {
    if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = std::move(value);
  }

  // "key=value"
  void set_assignment(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override must look like key=value: " + std::string(kv));
    set(std::string(dataset::detail::trim(kv.substr(0, eq))), std::string(dataset::detail::trim(kv.substr(eq + 1))));
  }

  void load_text(std::string_view text, const std::string& source = "config") {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto eol = text.find('\n', pos);
      const auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
      pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
      ++line_no;
      const auto t = dataset::detail::trim(line);
      if (t.empty() || t.front() == '#') continue;
      try {
        set_assignment(t);
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  void load_file(const std::string& path) { load_text(io::read_text(path), path); }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  bool empty(const std::string& key) const { return str(key).empty(); }

  double num(const std::string& key) const {
    const auto v = dataset::detail::parse_number<double>(str(key));
    if (!v) throw ConfigError(key + ": expected a number, got '" + str(key) + "'");
    return *v;
  }
  long long integer(const std::string& key) const {
    const auto v = dataset::detail::parse_number<long long>(str(key));
    if (!v) throw ConfigError(key + ": expected an integer, got '" + str(key) + "'");
    return *v;
  }
  std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw ConfigError(key + ": must be non-negative");
    return static_cast<std::size_t>(v);
  }
  std::uint64_t u64(const std::string& key) const {
    const auto v = dataset::detail::parse_number<std::uint64_t>(str(key));
    if (!v) throw ConfigError(key + ": expected an unsigned integer, got '" + str(key) + "'");
    return *v;
  }
  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
  }
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::string_view s = str(key);
    while (!s.empty()) {
      const auto comma = s.find(',');
      const auto item = dataset::detail::trim(s.substr(0, comma));
      if (!item.empty()) out.emplace_back(item);
      if (comma == std::string_view::npos) break;
      s.remove_prefix(comma + 1);
    }
    return out;
  }

  // Scenario built from whichever scenario keys the schema carries.
  dataset::ScenarioConfig scenario() const {
    dataset::ScenarioConfig cfg;
    for (const auto& k : scenario_keys()) {
      if (!values_.count(k.name)) continue;
      const auto& v = values_.at(k.name);
      if (v.empty() && k.name == "replay_file") continue;
      try {
        dataset::apply_scenario_key(cfg, k.name, v);
      } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
      }
    }
    if (cfg.kind == dataset::ScenarioKind::Replay) {
      if (cfg.replay_file.empty()) throw ConfigError("replay scenarios need replay_file");
      auto scene = dataset::parse_trajectory_file(io::read_text(cfg.replay_file),
                                                  std::filesystem::path(cfg.replay_file).stem().string());
      cfg.replay = std::make_shared<const dataset::ReplayScene>(std::move(scene));
    }
    try {
      dataset::validate_scenario(cfg);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    return cfg;
  }

  std::string resolved() const {
    std::string out;
    for (const auto& k : schema_) out += k.name + " = " + values_.at(k.name) + "\n";
    return out;
  }
  std::string hash() const { return hex64(fnv1a64(resolved())); }

  void write_resolved(const std::string& path) const { io::write_text(path, resolved()); }

 private:
  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
};

inline std::vector<KeySpec> concat(std::vector<KeySpec> a, const std::vector<KeySpec>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace gazenav::config
