#pragma once

// JSON encodings shared by record, trajectory and teleop files.

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "gazenav/common.hpp"
#include "gazenav/sim.hpp"

namespace gazenav::io {

using nlohmann::json;

class FormatError : public Error {
 public:
  using Error::Error;
};

inline json agent_to_json(const sim::AgentState& a, bool full) {
  json j{{"x", a.position.x}, {"y", a.position.y}, {"vx", a.velocity.x}, {"vy", a.velocity.y}, {"r", a.radius}};
  if (full) {
    j["gx"] = a.goal.x;
    j["gy"] = a.goal.y;
    j["v_pref"] = a.v_pref;
    j["theta"] = a.heading;
  }
  return j;
}

inline double require_number(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_number())
    throw FormatError(std::string("missing numeric field '") + key + "'");
  return j[key].get<double>();
}

inline sim::AgentState agent_from_json(const json& j) {
  sim::AgentState a;
  a.position = {require_number(j, "x"), require_number(j, "y")};
  a.velocity = {require_number(j, "vx"), require_number(j, "vy")};
  a.radius = require_number(j, "r");
  if (j.contains("gx")) a.goal = {require_number(j, "gx"), require_number(j, "gy")};
  if (j.contains("v_pref")) a.v_pref = require_number(j, "v_pref");
  if (j.contains("theta")) a.heading = require_number(j, "theta");
  if (!(a.radius > 0.0)) throw FormatError("agent radius must be positive");
  return a;
}

inline json scene_to_json(const sim::SceneState& s) {
  json j;
  j["t"] = s.time;
  j["robot"] = agent_to_json(s.robot, true);
  j["humans"] = json::array();
  for (const auto& h : s.humans) j["humans"].push_back(agent_to_json(h, false));
  j["goal"] = {{"x", s.robot.goal.x}, {"y", s.robot.goal.y}};
  return j;
}

inline sim::SceneState scene_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("scene must be an object");
  sim::SceneState s;
  if (j.contains("t")) s.time = require_number(j, "t");
  if (!j.contains("robot")) throw FormatError("scene without robot");
  s.robot = agent_from_json(j["robot"]);
  if (j.contains("goal")) s.robot.goal = {require_number(j["goal"], "x"), require_number(j["goal"], "y")};
  if (!j.contains("humans") || !j["humans"].is_array()) throw FormatError("scene without humans array");
  for (const auto& h : j["humans"]) s.humans.push_back(agent_from_json(h));
  return s;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

// Parses JSON Lines, skipping blank lines. Errors carry 1-based line numbers.
inline std::vector<json> parse_jsonl(const std::string& text) {
  std::vector<json> out;
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw FormatError("line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace gazenav::io
