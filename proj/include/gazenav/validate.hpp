#pragma once

// Schema checks for every file the tools write. The kind is detected from the content.

#include <cmath>
#include <sstream>
#include <string>

#include "gazenav/attention.hpp"
#include "gazenav/checkpoint.hpp"
#include "gazenav/dataset.hpp"
#include "gazenav/eval.hpp"
#include "gazenav/io.hpp"
#include "gazenav/policy.hpp"

namespace gazenav::validate {

struct Result {
  std::string kind;
  bool ok = false;
  std::string message;
  std::size_t items = 0;
};

namespace detail {

inline void check(bool cond, const std::string& what) {
  if (!cond) throw io::FormatError(what);
}

inline std::size_t trajectory_log(const std::string& text) {
  const auto log = eval::parse_trajectory_log(text);
  check(!log.states.empty(), "trajectory log has no states");
  for (std::size_t i = 1; i < log.states.size(); ++i) {
    const double step = log.states[i].time - log.states[i - 1].time;
    check(step > 0.0, "state " + std::to_string(i + 1) + ": timestamps must increase");
    if (i > 1) {
      const double prev = log.states[i - 1].time - log.states[i - 2].time;
      check(std::fabs(step - prev) < 1e-6, "state " + std::to_string(i + 1) + ": uneven time step");
    }
  }
  const auto& last = log.states.back();
  const bool collided = sim::detect_collision(last).collision.has_value();
  check(std::fabs(log.nav_time - last.time) < 1e-6, "nav_time differs from the last timestamp");
  switch (log.outcome) {
    case sim::OutcomeKind::Collision:
      check(collided, "Collision outcome without overlap in the final state");
      break;
    case sim::OutcomeKind::Success:
      check(!collided && sim::reached_goal(last, last.robot.radius), "Success outcome away from the goal");
      break;
    case sim::OutcomeKind::Timeout:
      check(!collided, "Timeout outcome with overlap in the final state");
      break;
  }
  return log.states.size();
}

inline std::size_t training_log(const std::vector<io::json>& lines) {
  std::size_t prev = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto l = policy::episode_log_from_json(lines[i]);
    check(sim::outcome_from_string(l.outcome).has_value(), "line " + std::to_string(i + 1) + ": bad outcome");
    check(i == 0 || l.episode == prev + 1, "line " + std::to_string(i + 1) + ": episodes must be consecutive");
    check(l.epsilon >= 0.0 && l.epsilon <= 1.0, "line " + std::to_string(i + 1) + ": epsilon out of range");
    prev = l.episode;
  }
  return lines.size();
}

inline void eval_report(const io::json& j) {
  for (const char* k : {"success_rate", "collision_rate", "timeout_rate"}) {
    const double v = io::require_number(j, k);
    check(v >= 0.0 && v <= 1.0, std::string(k) + " outside [0, 1]");
  }
  const double sum = j["success_rate"].get<double>() + j["collision_rate"].get<double>() + j["timeout_rate"].get<double>();
  check(std::fabs(sum - 1.0) < 1e-9, "rates do not sum to one");
  check(io::require_number(j, "trials") > 0, "trials must be positive");
  check(j.contains("config_hash") && j["config_hash"].is_string(), "missing config_hash");
}

// Resolved command configs: `key = value` lines. Keys are not tied to one
// command here, but scenario keys must parse and form a valid scenario.
inline std::size_t config_file(const std::string& text) {
  dataset::ScenarioConfig cfg;
  std::size_t line_no = 0, keys = 0;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = dataset::detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos || dataset::detail::trim(t.substr(0, eq)).empty())
      throw dataset::ParseError(line_no, "expected key = value");
    const std::string key(dataset::detail::trim(t.substr(0, eq)));
    const auto value = dataset::detail::trim(t.substr(eq + 1));
    if (key == "replay_file" && value.empty()) continue;
    try {
      dataset::apply_scenario_key(cfg, key, value);
    } catch (const InvalidArgument& e) {
      throw dataset::ParseError(line_no, e.what());
    }
    ++keys;
  }
  if (cfg.kind == dataset::ScenarioKind::CircleCrossing) dataset::validate_scenario(cfg);
  return keys;
}

}  // namespace detail

inline Result validate_text(const std::string& text) {
  Result r;
  try {
    if (text.size() >= 8 && text.compare(0, 8, std::string(nn::kCheckpointMagic, 8)) == 0) {
      r.kind = "checkpoint";
      std::istringstream is(text, std::ios::binary);
      r.items = nn::read_checkpoint(is).size();
    } else if (text.size() >= 8 && text.compare(0, 8, std::string(policy::kBufferMagic, 8)) == 0) {
      r.kind = "replay-buffer";
      std::istringstream is(text, std::ios::binary);
      r.items = policy::read_buffer(is).size();
    } else if (text.rfind("# rate", 0) == 0) {
      r.kind = "trajectory-dataset";
      r.items = dataset::parse_trajectory_file(text).tracks.size();
    } else {
      const auto first = text.find_first_not_of(" \t\r\n");
      detail::check(first != std::string::npos, "empty file");
      if (text[first] != '{' && text[first] != '[') {
        r.kind = "config";
        r.items = detail::config_file(text);
      } else {
        const auto doc = io::json::parse(text, nullptr, false);
        const bool document = !doc.is_discarded() &&
                              (doc.is_array() || doc.contains("success_rate") ||
                               (doc.contains("humans") && doc.contains("records")) || doc.contains("format") ||
                               doc.contains("loss_curve"));
        if (!document) {
          const auto lines = io::parse_jsonl(text);
          const auto& h = lines.front();
          if (h.value("type", "") == "header") {
            r.kind = "gaze-session";
            r.items = attention::parse_gaze_session(text).samples.size();
          } else if (lines.back().is_object() && lines.back().value("type", "") == "outcome") {
            r.kind = "trajectory-log";
            r.items = detail::trajectory_log(text);
          } else if (h.contains("label")) {
            r.kind = "attention-records";
            r.items = attention::parse_records(text).size();
          } else if (h.contains("episode")) {
            r.kind = "training-log";
            r.items = detail::training_log(lines);
          } else {
            throw io::FormatError("unrecognized JSON Lines file");
          }
        } else if (doc.is_array()) {
          r.kind = "comparison-table";
          for (const auto& row : doc) detail::eval_report(row);
          r.items = doc.size();
        } else if (doc.contains("success_rate")) {
          r.kind = "eval-report";
          detail::eval_report(doc);
          r.items = 1;
        } else if (doc.contains("loss_curve")) {
          r.kind = "training-metrics";
          detail::check(doc["loss_curve"].is_array(), "loss_curve must be an array");
          for (const auto& v : doc["loss_curve"])
            detail::check(v.is_number() && std::isfinite(v.get<double>()), "loss_curve holds a non-finite value");
          r.items = doc["loss_curve"].size();
        } else if (doc.contains("records")) {
          r.kind = "attention-report";
          r.items = doc["records"].get<std::size_t>();
        } else if (doc.value("format", "") == "gazenav-checkpoint") {
          r.kind = "checkpoint-metadata";
          detail::check(doc.contains("hash"), "checkpoint metadata lacks a hash");
          r.items = doc["nets"].size();
        } else {
          throw io::FormatError("unrecognized JSON document");
        }
      }
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.message = e.what();
  }
  return r;
}

inline Result validate_file(const std::string& path) {
  Result r;
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const std::exception& e) {
    r.kind = "unreadable";
    r.message = e.what();
    return r;
  }
  r = validate_text(text);
  if (r.ok && r.kind == "checkpoint") {
    std::ifstream side(path + ".json");
    if (side) {
      const auto meta = io::json::parse(side, nullptr, false);
      if (meta.is_discarded() || meta.value("hash", "") != hex64(fnv1a64(text))) {
        r.ok = false;
        r.message = "sidecar hash does not match checkpoint bytes";
      }
    }
  }
  return r;
}

}  // namespace gazenav::validate
