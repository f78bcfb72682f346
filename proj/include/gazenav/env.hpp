#pragma once

// Episode environment: a robot driven by external actions among ORCA-driven or
// replayed humans.

#include <cstdint>
#include <memory>
#include <vector>

#include "gazenav/common.hpp"
#include "gazenav/dataset.hpp"
#include "gazenav/orca.hpp"
#include "gazenav/reward.hpp"
#include "gazenav/sim.hpp"

namespace gazenav::env {

struct StepResult {
  sim::SceneState next;
  double reward = 0.0;
  bool done = false;
  policy::StepStatus status = policy::StepStatus::Running;
};

class CrowdEnv {
 public:
  explicit CrowdEnv(dataset::ScenarioConfig config, orca::OrcaParams orca = {})
      : config_(std::move(config)), orca_(orca) {
    orca_.dt = config_.dt;
    dataset::validate_scenario(config_);
    if (config_.kind == dataset::ScenarioKind::Replay) {
      if (!config_.replay) throw InvalidArgument("replay scenario without a loaded scene");
      mirrored_ = std::make_shared<const dataset::ReplayScene>(dataset::mirror_scene(*config_.replay));
    }
  }

  // Starts an episode. `trial` alternates the robot's start side in replay scenes.
  const sim::SceneState& reset(std::uint64_t seed, std::uint64_t trial = 0) {
    Rng rng(seed);
    done_ = false;
    status_ = policy::StepStatus::Running;
    if (config_.kind == dataset::ScenarioKind::CircleCrossing) {
      auto cc = dataset::make_circle_crossing(config_.n_humans, config_.circle_radius, seed, config_);
      scene_ = std::move(cc.initial);
      replay_ = nullptr;
    } else {
      const bool mirror = config_.mirror && (uniform01(rng) < 0.5);
      replay_ = mirror ? mirrored_.get() : config_.replay.get();
      const int frame = config_.random_start ? dataset::random_start_frame(*replay_, rng, config_.time_limit)
                                             : config_.start_frame;
      replay_t0_ = frame / replay_->frame_rate;
      auto placed = config_;
      placed.replay = config_.replay;
      dataset::place_robot_in_replay(placed, trial % 2 == 1);
      scene_ = {};
      scene_.robot = dataset::make_agent(placed.robot_start, placed.robot_goal, config_.robot_radius, config_.v_pref);
      scene_.humans = dataset::humans_at_time(*replay_, replay_t0_, config_.human_radius);
    }
    scene_.time = 0.0;
    return scene_;
  }

  StepResult step(const sim::Action& action) {
    if (done_) throw InvalidArgument("step called on a finished episode");
    sim::SceneState next;
    next.time = scene_.time + config_.dt;
    next.robot = sim::step_robot(scene_.robot, action, config_.dt);
    next.humans = advance_humans(next.time);
    const auto r = policy::reward(scene_, next, config_.dt, config_.time_limit);
    scene_ = std::move(next);
    done_ = r.terminal;
    status_ = r.status;
    return {scene_, r.reward, r.terminal, r.status};
  }

  const sim::SceneState& scene() const { return scene_; }
  const dataset::ScenarioConfig& config() const { return config_; }
  const orca::OrcaParams& orca_params() const { return orca_; }
  bool done() const { return done_; }
  policy::StepStatus status() const { return status_; }
  double dt() const { return config_.dt; }

 private:
  std::vector<sim::AgentState> advance_humans(double t_next) const {
    if (config_.kind == dataset::ScenarioKind::Replay)
      return dataset::humans_at_time(*replay_, replay_t0_ + t_next, config_.human_radius);
    std::vector<sim::AgentState> passive;
    if (config_.robot_visible) passive.push_back(scene_.robot);
    return orca::simulate_crowd_step(scene_.humans, orca_, passive);
  }

  dataset::ScenarioConfig config_;
  orca::OrcaParams orca_;
  std::shared_ptr<const dataset::ReplayScene> mirrored_;
  const dataset::ReplayScene* replay_ = nullptr;
  double replay_t0_ = 0.0;
  sim::SceneState scene_;
  bool done_ = false;
  policy::StepStatus status_ = policy::StepStatus::Running;
};

}  // namespace gazenav::env
