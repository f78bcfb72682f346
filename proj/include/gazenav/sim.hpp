#pragma once

// Holonomic agent kinematics, the robot-centric frame and terminal checks.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gazenav/common.hpp"

namespace gazenav::sim {

inline constexpr double kSpeedEpsilon = 1e-6;
inline constexpr double kFrameEpsilon = 1e-9;
inline constexpr double kDefaultDt = 0.25;

class DegenerateFrame : public Error {
 public:
  DegenerateFrame() : Error("robot frame undefined: robot is on its goal") {}
};

struct AgentState {
  Vec2 position;
  Vec2 velocity;
  double radius = 0.3;
  Vec2 goal;
  double v_pref = 1.0;
  double heading = 0.0;

  bool valid() const {
    return position.finite() && velocity.finite() && goal.finite() && std::isfinite(heading) &&
           radius > 0.0 && v_pref > 0.0 && velocity.norm() <= v_pref + kSpeedEpsilon;
  }
};

struct SceneState {
  AgentState robot;
  std::vector<AgentState> humans;
  double time = 0.0;
};

// World-frame holonomic velocity command.
struct Action {
  double vx = 0.0;
  double vy = 0.0;

  double speed() const { return std::hypot(vx, vy); }
  Vec2 vec() const { return {vx, vy}; }
  bool operator==(const Action&) const = default;
};

enum class OutcomeKind { Success, Collision, Timeout };

inline std::string_view to_string(OutcomeKind k) {
  switch (k) {
    case OutcomeKind::Success:
      return "Success";
    case OutcomeKind::Collision:
      return "Collision";
    case OutcomeKind::Timeout:
      return "Timeout";
  }
  return "Unknown";
}

inline std::optional<OutcomeKind> outcome_from_string(std::string_view s) {
  if (s == "Success") return OutcomeKind::Success;
  if (s == "Collision") return OutcomeKind::Collision;
  if (s == "Timeout") return OutcomeKind::Timeout;
  return std::nullopt;
}

struct EpisodeOutcome {
  OutcomeKind kind = OutcomeKind::Timeout;
  double navigation_time = 0.0;
  std::vector<SceneState> trajectory;
};

inline AgentState step_robot(const AgentState& state, const Action& action, double dt) {
  if (!std::isfinite(action.vx) || !std::isfinite(action.vy))
    throw InvalidArgument("step_robot: non-finite action");
  if (!(dt > 0.0)) throw InvalidArgument("step_robot: dt must be positive");
  if (action.speed() > state.v_pref + kSpeedEpsilon)
    throw InvalidArgument("step_robot: action exceeds v_pref");
  AgentState next = state;
  next.position = state.position + action.vec() * dt;
  next.velocity = action.vec();
  if (action.speed() > 0.0) next.heading = std::atan2(action.vy, action.vx);
  return next;
}

// Rigid transform into the robot-centric frame: robot at the origin, +x toward its goal.
struct Frame {
  Vec2 origin;
  double angle = 0.0;  // world angle of the frame's +x axis
  double c = 1.0;
  double s = 0.0;

  // With `lenient`, a robot sitting on its goal gets a frame aligned with its heading.
  static Frame from(const AgentState& robot, bool lenient = false) {
    const Vec2 d = robot.goal - robot.position;
    if (d.norm() <= kFrameEpsilon) {
      if (!lenient) throw DegenerateFrame();
      Frame f;
      f.origin = robot.position;
      f.angle = robot.heading;
      f.c = std::cos(robot.heading);
      f.s = std::sin(robot.heading);
      return f;
    }
    Frame f;
    f.origin = robot.position;
    f.angle = std::atan2(d.y, d.x);
    const double n = d.norm();
    f.c = d.x / n;
    f.s = d.y / n;
    return f;
  }

  Vec2 vector_to_local(const Vec2& v) const { return {c * v.x + s * v.y, -s * v.x + c * v.y}; }
  Vec2 point_to_local(const Vec2& p) const { return vector_to_local(p - origin); }
  Vec2 vector_to_world(const Vec2& v) const { return {c * v.x - s * v.y, s * v.x + c * v.y}; }
  Vec2 point_to_world(const Vec2& p) const { return vector_to_world(p) + origin; }

  AgentState to_local(const AgentState& a) const {
    AgentState out = a;
    out.position = point_to_local(a.position);
    out.velocity = vector_to_local(a.velocity);
    out.goal = point_to_local(a.goal);
    out.heading = wrap_angle(a.heading - angle);
    return out;
  }
};

inline SceneState to_robot_frame(const SceneState& scene, bool lenient = false) {
  const Frame f = Frame::from(scene.robot, lenient);
  SceneState out;
  out.time = scene.time;
  out.robot = f.to_local(scene.robot);
  // Exact zeros for the robot itself.
  out.robot.position = {0.0, 0.0};
  out.humans.reserve(scene.humans.size());
  for (const auto& h : scene.humans) out.humans.push_back(f.to_local(h));
  return out;
}

struct CollisionReport {
  std::size_t human_index = 0;
  double depth = 0.0;
};

struct ProximityReport {
  std::optional<CollisionReport> collision;
  // Minimum surface separation over humans; +inf when the crowd is empty.
  double d_min = kInf;
  std::size_t closest = 0;
};

inline ProximityReport detect_collision(const SceneState& scene) {
  ProximityReport report;
  for (std::size_t i = 0; i < scene.humans.size(); ++i) {
    const auto& h = scene.humans[i];
    const double sep = (h.position - scene.robot.position).norm() - h.radius - scene.robot.radius;
    if (sep < report.d_min) {
      report.d_min = sep;
      report.closest = i;
    }
  }
  if (report.d_min < 0.0) report.collision = CollisionReport{report.closest, -report.d_min};
  return report;
}

inline bool reached_goal(const SceneState& scene, double tol) {
  if (!(tol > 0.0)) throw InvalidArgument("reached_goal: tolerance must be positive");
  return (scene.robot.position - scene.robot.goal).norm() < tol;
}

}  // namespace gazenav::sim
