#pragma once

// Pedestrian trajectory files, replayable scenes and synthetic crowd scenarios.
//
// Trajectory file layout (UTF-8 text):
//   # rate <frames_per_second>
//   <frame:int> <ped_id:int> <x:float> <y:float>
//   ...
// Other lines starting with '#' are comments.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gazenav/common.hpp"
#include "gazenav/sim.hpp"

namespace gazenav::dataset {

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class EmptyScene : public Error {
 public:
  EmptyScene() : Error("trajectory file contains no track points") {}
};

class PlacementFailure : public Error {
 public:
  PlacementFailure() : Error("could not place humans without overlap") {}
};

struct TrackPoint {
  int frame = 0;
  int ped_id = 0;
  Vec2 position;
};

struct Bounds {
  Vec2 lo{kInf, kInf};
  Vec2 hi{-kInf, -kInf};

  void extend(const Vec2& p) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  bool contains(const Vec2& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
  Vec2 center() const { return (lo + hi) * 0.5; }
};

struct ReplayScene {
  std::map<int, std::vector<TrackPoint>> tracks;
  double frame_rate = 1.0;
  Bounds bounds;
  std::string name;

  int first_frame() const {
    int f = std::numeric_limits<int>::max();
    for (const auto& [id, t] : tracks) f = std::min(f, t.front().frame);
    return f;
  }
  int last_frame() const {
    int f = std::numeric_limits<int>::min();
    for (const auto& [id, t] : tracks) f = std::max(f, t.back().frame);
    return f;
  }
  // Distinct annotated frame numbers, ascending.
  std::vector<int> frames() const {
    std::set<int> s;
    for (const auto& [id, t] : tracks)
      for (const auto& p : t) s.insert(p.frame);
    return {s.begin(), s.end()};
  }
  double duration() const { return (last_frame() - first_frame()) / frame_rate; }
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) return std::nullopt;
  }
  return v;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

inline ReplayScene parse_trajectory_file(std::string_view text, std::string name = "") {
  ReplayScene scene;
  scene.name = std::move(name);
  std::optional<double> rate;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto toks = detail::split_ws(line.substr(1));
      if (toks.size() == 2 && toks[0] == "rate") {
        const auto r = detail::parse_number<double>(toks[1]);
        if (!r || *r <= 0.0) throw ParseError(line_no, "invalid frame rate");
        rate = *r;
      }
      continue;
    }
    const auto toks = detail::split_ws(line);
    if (toks.size() != 4) throw ParseError(line_no, "expected 4 fields");
    const auto frame = detail::parse_number<int>(toks[0]);
    const auto ped = detail::parse_number<int>(toks[1]);
    const auto x = detail::parse_number<double>(toks[2]);
    const auto y = detail::parse_number<double>(toks[3]);
    if (!frame || !ped || !x || !y) throw ParseError(line_no, "malformed field");
    auto& track = scene.tracks[*ped];
    if (!track.empty() && track.back().frame >= *frame)
      throw ParseError(line_no, "frames not increasing for ped_id " + std::to_string(*ped));
    track.push_back({*frame, *ped, {*x, *y}});
    scene.bounds.extend({*x, *y});
  }
  if (scene.tracks.empty()) throw EmptyScene();
  if (!rate) throw ParseError(1, "missing '# rate <fps>' header");
  scene.frame_rate = *rate;
  return scene;
}

inline std::string write_trajectory_file(const ReplayScene& scene) {
  std::vector<TrackPoint> all;
  for (const auto& [id, t] : scene.tracks) all.insert(all.end(), t.begin(), t.end());
  std::stable_sort(all.begin(), all.end(), [](const TrackPoint& a, const TrackPoint& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.ped_id < b.ped_id;
  });
  std::ostringstream os;
  os << "# rate " << std::setprecision(17) << scene.frame_rate << '\n';
  if (!scene.name.empty()) os << "# scene " << scene.name << '\n';
  char buf[96];
  for (const auto& p : all) {
    std::snprintf(buf, sizeof buf, "%d %d %.9g %.9g\n", p.frame, p.ped_id, p.position.x,
                  p.position.y);
    os << buf;
  }
  return os.str();
}

// Reflection about the x axis (augmentation).
inline ReplayScene mirror_scene(const ReplayScene& scene) {
  ReplayScene out = scene;
  out.bounds = {};
  for (auto& [id, t] : out.tracks)
    for (auto& p : t) {
      p.position.y = -p.position.y;
      out.bounds.extend(p.position);
    }
  return out;
}

// Pedestrians active at time t (seconds, t = frame / rate), ordered by ped_id.
inline std::vector<sim::AgentState> humans_at_time(const ReplayScene& scene, double t,
                                                   double radius = 0.3) {
  std::vector<sim::AgentState> out;
  const double f = t * scene.frame_rate;
  for (const auto& [id, track] : scene.tracks) {
    if (f < track.front().frame || f > track.back().frame) continue;
    sim::AgentState a;
    a.radius = radius;
    a.goal = track.back().position;
    if (track.size() == 1) {
      a.position = track.front().position;
    } else {
      auto hi = std::upper_bound(track.begin(), track.end(), f,
                                 [](double v, const TrackPoint& p) { return v < p.frame; });
      if (hi == track.end()) --hi;
      const auto lo = hi - 1;
      const double span = hi->frame - lo->frame;
      const double u = (f - lo->frame) / span;
      a.position = lo->position + (hi->position - lo->position) * u;
      a.velocity = (hi->position - lo->position) * (scene.frame_rate / span);
    }
    a.v_pref = std::max(1.0, a.velocity.norm());
    const Vec2 to_goal = a.goal - a.position;
    if (a.velocity.norm() > 0.0)
      a.heading = std::atan2(a.velocity.y, a.velocity.x);
    else if (to_goal.norm() > 0.0)
      a.heading = std::atan2(to_goal.y, to_goal.x);
    out.push_back(a);
  }
  return out;
}

enum class ScenarioKind { Replay, CircleCrossing };

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::CircleCrossing;
  // Replay
  std::shared_ptr<const ReplayScene> replay;
  std::string replay_file;
  int start_frame = 0;
  bool random_start = true;
  bool mirror = false;
  // CircleCrossing
  int n_humans = 5;
  double circle_radius = 4.0;

  Vec2 robot_start{0.0, -4.0};
  Vec2 robot_goal{0.0, 4.0};
  double time_limit = 30.0;
  double human_radius = 0.3;
  double robot_radius = 0.3;
  double v_pref = 1.0;
  double dt = sim::kDefaultDt;
  bool robot_visible = true;

  std::string name() const {
    if (kind == ScenarioKind::Replay)
      return replay ? (replay->name.empty() ? std::string("replay") : replay->name) : "replay";
    return "circle_crossing_" + std::to_string(n_humans);
  }
};

struct CircleCrossing {
  ScenarioConfig config;
  sim::SceneState initial;
};

inline sim::AgentState make_agent(const Vec2& start, const Vec2& goal, double radius, double v_pref) {
  sim::AgentState a;
  a.position = start;
  a.goal = goal;
  a.radius = radius;
  a.v_pref = v_pref;
  const Vec2 d = goal - start;
  a.heading = d.norm() > 0.0 ? std::atan2(d.y, d.x) : 0.0;
  return a;
}

// Humans on a circle at random angles, each heading to its antipode; robot crosses along y.
inline CircleCrossing make_circle_crossing(int n_humans, double circle_radius, std::uint64_t seed,
                                           ScenarioConfig base = {}) {
  if (n_humans < 0) throw InvalidArgument("make_circle_crossing: negative n_humans");
  if (!(circle_radius > 0.0)) throw InvalidArgument("make_circle_crossing: radius must be positive");
  constexpr int kMaxAttempts = 1000;
  constexpr double kMargin = 0.1;

  CircleCrossing out;
  out.config = base;
  out.config.kind = ScenarioKind::CircleCrossing;
  out.config.n_humans = n_humans;
  out.config.circle_radius = circle_radius;
  out.config.robot_start = {0.0, -circle_radius};
  out.config.robot_goal = {0.0, circle_radius};

  const auto& cfg = out.config;
  auto& scene = out.initial;
  scene.robot = make_agent(cfg.robot_start, cfg.robot_goal, cfg.robot_radius, cfg.v_pref);

  Rng rng(seed);
  for (int i = 0; i < n_humans; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const double angle = uniform(rng, 0.0, 2.0 * M_PI);
      const Vec2 start{circle_radius * std::cos(angle), circle_radius * std::sin(angle)};
      const double robot_clear = cfg.human_radius + cfg.robot_radius + kMargin;
      if ((start - cfg.robot_start).norm() <= robot_clear) continue;
      if ((start - cfg.robot_goal).norm() <= robot_clear) continue;
      bool ok = true;
      for (const auto& h : scene.humans) {
        if ((start - h.position).norm() <= 2.0 * cfg.human_radius + kMargin) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      scene.humans.push_back(make_agent(start, -start, cfg.human_radius, cfg.v_pref));
      placed = true;
    }
    if (!placed) throw PlacementFailure();
  }
  return out;
}

// Uniform start frame among frames with an active pedestrian and at least
// `time_limit` seconds of footage left; falls back to all frames.
inline int random_start_frame(const ReplayScene& scene, Rng& rng, double time_limit = 30.0) {
  const auto frames = scene.frames();
  if (frames.empty()) throw EmptyScene();
  const int last = scene.last_frame();
  std::vector<int> eligible;
  for (int f : frames) {
    if ((last - f) / scene.frame_rate < time_limit) continue;
    bool active = false;
    for (const auto& [id, t] : scene.tracks) {
      if (t.front().frame <= f && f <= t.back().frame) {
        active = true;
        break;
      }
    }
    if (active) eligible.push_back(f);
  }
  const auto& pool = eligible.empty() ? frames : eligible;
  return pool[uniform_index(rng, pool.size())];
}

// Robot start and goal on opposite sides of the scene center, `offset` meters out.
inline void place_robot_in_replay(ScenarioConfig& cfg, bool reverse, double offset = 4.0) {
  const Vec2 c = cfg.replay ? cfg.replay->bounds.center() : Vec2{};
  Vec2 a = c - Vec2{offset, 0.0};
  Vec2 b = c + Vec2{offset, 0.0};
  if (reverse) std::swap(a, b);
  cfg.robot_start = a;
  cfg.robot_goal = b;
}

// ---- scenario config files: `key = value` lines ----------------------------

namespace detail {
inline Vec2 parse_vec2(const std::string& key, std::string_view v) {
  const auto comma = v.find(',');
  if (comma == std::string_view::npos) throw InvalidArgument(key + ": expected x,y");
  const auto x = parse_number<double>(trim(v.substr(0, comma)));
  const auto y = parse_number<double>(trim(v.substr(comma + 1)));
  if (!x || !y) throw InvalidArgument(key + ": expected x,y");
  return {*x, *y};
}
inline double parse_double(const std::string& key, std::string_view v) {
  const auto d = parse_number<double>(trim(v));
  if (!d) throw InvalidArgument(key + ": expected a number");
  return *d;
}
inline int parse_int(const std::string& key, std::string_view v) {
  const auto d = parse_number<int>(trim(v));
  if (!d) throw InvalidArgument(key + ": expected an integer");
  return *d;
}
inline bool parse_bool(const std::string& key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument(key + ": expected true/false");
}
inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}
}  // namespace detail

// Applies one key to a scenario; returns false for keys it does not own.
inline bool apply_scenario_key(ScenarioConfig& cfg, const std::string& key, std::string_view value) {
  using namespace detail;
  if (key == "kind") {
    const auto v = trim(value);
    if (v == "replay")
      cfg.kind = ScenarioKind::Replay;
    else if (v == "circle_crossing")
      cfg.kind = ScenarioKind::CircleCrossing;
    else
      throw InvalidArgument("kind: expected replay or circle_crossing");
  } else if (key == "replay_file") {
    cfg.replay_file = std::string(trim(value));
  } else if (key == "start_frame") {
    cfg.start_frame = parse_int(key, value);
  } else if (key == "random_start") {
    cfg.random_start = parse_bool(key, value);
  } else if (key == "mirror") {
    cfg.mirror = parse_bool(key, value);
  } else if (key == "n_humans") {
    cfg.n_humans = parse_int(key, value);
  } else if (key == "circle_radius") {
    cfg.circle_radius = parse_double(key, value);
  } else if (key == "robot_start") {
    cfg.robot_start = parse_vec2(key, value);
  } else if (key == "robot_goal") {
    cfg.robot_goal = parse_vec2(key, value);
  } else if (key == "time_limit") {
    cfg.time_limit = parse_double(key, value);
  } else if (key == "human_radius") {
    cfg.human_radius = parse_double(key, value);
  } else if (key == "robot_radius") {
    cfg.robot_radius = parse_double(key, value);
  } else if (key == "v_pref") {
    cfg.v_pref = parse_double(key, value);
  } else if (key == "dt") {
    cfg.dt = parse_double(key, value);
  } else if (key == "robot_visible") {
    cfg.robot_visible = parse_bool(key, value);
  } else {
    return false;
  }
  return true;
}

inline void validate_scenario(const ScenarioConfig& cfg) {
  if (!(cfg.time_limit > 0.0)) throw InvalidArgument("time_limit must be positive");
  if (!(cfg.dt > 0.0)) throw InvalidArgument("dt must be positive");
  if (!(cfg.human_radius > 0.0) || !(cfg.robot_radius > 0.0))
    throw InvalidArgument("radii must be positive");
  if (!(cfg.v_pref > 0.0)) throw InvalidArgument("v_pref must be positive");
  if (cfg.kind == ScenarioKind::CircleCrossing) {
    if (cfg.n_humans < 0) throw InvalidArgument("n_humans must be non-negative");
    if (!(cfg.circle_radius > 0.0)) throw InvalidArgument("circle_radius must be positive");
  } else if ((cfg.robot_start - cfg.robot_goal).norm() <= 0.0 && !cfg.replay) {
    throw InvalidArgument("robot_start and robot_goal coincide");
  }
}

inline ScenarioConfig parse_scenario_config(std::string_view text) {
  ScenarioConfig cfg;
  std::size_t line_no = 0;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
    const std::string key(detail::trim(t.substr(0, eq)));
    try {
      if (!apply_scenario_key(cfg, key, t.substr(eq + 1)))
        throw ParseError(line_no, "unknown key '" + key + "'");
    } catch (const InvalidArgument& e) {
      throw ParseError(line_no, e.what());
    }
  }
  validate_scenario(cfg);
  return cfg;
}

inline std::string write_scenario_config(const ScenarioConfig& cfg) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "kind = " << (cfg.kind == ScenarioKind::Replay ? "replay" : "circle_crossing") << '\n';
  if (cfg.kind == ScenarioKind::Replay) {
    os << "replay_file = " << cfg.replay_file << '\n'
       << "start_frame = " << cfg.start_frame << '\n'
       << "random_start = " << (cfg.random_start ? "true" : "false") << '\n'
       << "mirror = " << (cfg.mirror ? "true" : "false") << '\n';
  } else {
    os << "n_humans = " << cfg.n_humans << '\n'
       << "circle_radius = " << fmt_double(cfg.circle_radius) << '\n';
  }
  os << "robot_start = " << fmt_double(cfg.robot_start.x) << "," << fmt_double(cfg.robot_start.y) << '\n'
     << "robot_goal = " << fmt_double(cfg.robot_goal.x) << "," << fmt_double(cfg.robot_goal.y) << '\n'
     << "time_limit = " << fmt_double(cfg.time_limit) << '\n'
     << "human_radius = " << fmt_double(cfg.human_radius) << '\n'
     << "robot_radius = " << fmt_double(cfg.robot_radius) << '\n'
     << "v_pref = " << fmt_double(cfg.v_pref) << '\n'
     << "dt = " << fmt_double(cfg.dt) << '\n'
     << "robot_visible = " << (cfg.robot_visible ? "true" : "false") << '\n';
  return os.str();
}

}  // namespace gazenav::dataset
