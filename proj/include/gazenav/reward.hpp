#pragma once

#include <string_view>

#include "gazenav/common.hpp"
#include "gazenav/sim.hpp"

namespace gazenav::policy {

struct RewardParams {
  double success = 1.0;
  double collision = -0.25;
  double discomfort_dist = 0.2;
  double discomfort_scale = 0.5;
};

enum class StepStatus { Running, Success, Collision, Timeout };

inline std::string_view to_string(StepStatus s) {
  switch (s) {
    case StepStatus::Running:
      return "Running";
    case StepStatus::Success:
      return "Success";
    case StepStatus::Collision:
      return "Collision";
    case StepStatus::Timeout:
      return "Timeout";
  }
  return "?";
}

inline sim::OutcomeKind to_outcome(StepStatus s) {
  switch (s) {
    case StepStatus::Success:
      return sim::OutcomeKind::Success;
    case StepStatus::Collision:
      return sim::OutcomeKind::Collision;
    default:
      return sim::OutcomeKind::Timeout;
  }
}

struct RewardResult {
  double reward = 0.0;
  bool terminal = false;
  StepStatus status = StepStatus::Running;
};

// Reward of moving from `scene` to `next`. Collision outranks arrival, arrival
// outranks timeout; the discomfort penalty applies only to non-terminal steps.
inline RewardResult reward(const sim::SceneState& scene, const sim::SceneState& next, double dt,
                           double time_limit = kInf, const RewardParams& params = {}) {
  (void)scene;
  (void)dt;
  const auto prox = sim::detect_collision(next);
  if (prox.collision) return {params.collision, true, StepStatus::Collision};
  if (sim::reached_goal(next, next.robot.radius)) return {params.success, true, StepStatus::Success};
  if (next.time >= time_limit - 1e-9) return {0.0, true, StepStatus::Timeout};
  if (prox.d_min < params.discomfort_dist)
    return {(prox.d_min - params.discomfort_dist) * params.discomfort_scale, false, StepStatus::Running};
  return {0.0, false, StepStatus::Running};
}

}  // namespace gazenav::policy
