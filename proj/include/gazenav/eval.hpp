#pragma once

// Episode runner, success/time aggregation, comparison tables and attention
// similarity reports.

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gazenav/attention.hpp"
#include "gazenav/common.hpp"
#include "gazenav/dataset.hpp"
#include "gazenav/env.hpp"
#include "gazenav/io.hpp"
#include "gazenav/orca.hpp"
#include "gazenav/policy.hpp"
#include "gazenav/sim.hpp"

namespace gazenav::eval {

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual sim::Action act(const sim::SceneState& scene, Rng& rng) = 0;
};

// Greedy one-step lookahead on a trained value network.
class ValuePolicy : public Policy {
 public:
  ValuePolicy(std::string name, policy::PolicyNet net, policy::AttentionMode mode,
              policy::SelectionConfig cfg = {}, double epsilon = 0.0)
      : name_(std::move(name)), net_(std::move(net)), mode_(std::move(mode)), cfg_(cfg), epsilon_(epsilon) {}

  std::string name() const override { return name_; }
  sim::Action act(const sim::SceneState& scene, Rng& rng) override {
    if (!space_ || space_v_pref_ != scene.robot.v_pref) {
      space_ = policy::ActionSpace::standard(scene.robot.v_pref);
      space_v_pref_ = scene.robot.v_pref;
    }
    return policy::select_action(net_, scene, mode_, *space_, epsilon_, rng, cfg_).action;
  }
  const policy::PolicyNet& net() const { return net_; }
  const policy::AttentionMode& mode() const { return mode_; }

 private:
  std::string name_;
  policy::PolicyNet net_;
  policy::AttentionMode mode_;
  policy::SelectionConfig cfg_;
  double epsilon_;
  std::optional<policy::ActionSpace> space_;
  double space_v_pref_ = 0.0;
};

class OrcaPolicy : public Policy {
 public:
  explicit OrcaPolicy(orca::OrcaParams params = {}) : params_(params) {}
  std::string name() const override { return "ORCA"; }
  sim::Action act(const sim::SceneState& scene, Rng&) override { return policy::orca_robot_action(scene, params_); }

 private:
  orca::OrcaParams params_;
};

class ScriptedPolicy : public Policy {
 public:
  using Fn = std::function<sim::Action(const sim::SceneState&)>;
  ScriptedPolicy(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string name() const override { return name_; }
  sim::Action act(const sim::SceneState& scene, Rng&) override { return fn_(scene); }

 private:
  std::string name_;
  Fn fn_;
};

// Full speed straight at the goal, capped so the robot does not overshoot.
inline ScriptedPolicy straight_line_policy(double dt = sim::kDefaultDt) {
  return ScriptedPolicy("straight", [dt](const sim::SceneState& s) {
    const Vec2 v = orca::preferred_velocity(s.robot, dt);
    return sim::Action{v.x, v.y};
  });
}

// ---- episodes --------------------------------------------------------------

struct TrajectoryLog {
  std::string model;
  std::vector<sim::SceneState> states;
  sim::OutcomeKind outcome = sim::OutcomeKind::Timeout;
  double nav_time = 0.0;
};

inline std::string write_trajectory_log(const TrajectoryLog& log) {
  std::string out;
  for (const auto& s : log.states) out += io::scene_to_json(s).dump() + '\n';
  io::json last{{"type", "outcome"},
                {"outcome", std::string(sim::to_string(log.outcome))},
                {"nav_time", log.nav_time},
                {"model", log.model}};
  out += last.dump() + '\n';
  return out;
}

inline TrajectoryLog parse_trajectory_log(const std::string& text) {
  const auto lines = io::parse_jsonl(text);
  if (lines.empty()) throw io::FormatError("trajectory log is empty");
  const auto& last = lines.back();
  if (!last.is_object() || last.value("type", std::string()) != "outcome")
    throw io::FormatError("trajectory log lacks a final outcome line");
  TrajectoryLog log;
  const auto kind = sim::outcome_from_string(last.value("outcome", std::string()));
  if (!kind) throw io::FormatError("unknown outcome in trajectory log");
  log.outcome = *kind;
  log.nav_time = io::require_number(last, "nav_time");
  log.model = last.value("model", std::string());
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    try {
      log.states.push_back(io::scene_from_json(lines[i]));
    } catch (const io::FormatError& e) {
      throw io::FormatError("line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return log;
}

struct EpisodeRun {
  sim::EpisodeOutcome outcome;
  TrajectoryLog log;
};

inline EpisodeRun run_episode(const dataset::ScenarioConfig& config, Policy& pol, std::uint64_t seed,
                              std::uint64_t trial = 0, const orca::OrcaParams& orca_params = {}) {
  env::CrowdEnv env(config, orca_params);
  env.reset(seed, trial);
  Rng rng(derive_seed(seed, 0x706f6cULL));
  EpisodeRun run;
  run.log.model = pol.name();
  run.log.states.push_back(env.scene());
  while (!env.done()) {
    env.step(pol.act(env.scene(), rng));
    run.log.states.push_back(env.scene());
  }
  run.outcome.kind = policy::to_outcome(env.status());
  run.outcome.navigation_time = env.scene().time;
  run.outcome.trajectory = run.log.states;
  run.log.outcome = run.outcome.kind;
  run.log.nav_time = run.outcome.navigation_time;
  return run;
}

// ---- reports ---------------------------------------------------------------

struct EvalReport {
  std::string model;
  std::string scenario;
  std::size_t trials = 0;
  std::size_t successes = 0, collisions = 0, timeouts = 0;
  double success_rate = 0.0, collision_rate = 0.0, timeout_rate = 0.0;
  double mean_nav_time_success = std::nan("");  // NaN without successes
  double mean_nav_time_all = 0.0;
  double ci_low = 0.0, ci_high = 0.0;  // Wilson 95% on the success rate
  double straight_line_time = 0.0;     // robot-only reference
  std::string config_hash;
  std::uint64_t seed = 0;
  bool robot_visible_to_orca = true;
  bool replay_humans_react = false;
};

inline std::pair<double, double> wilson_interval(std::size_t k, std::size_t n, double z = 1.959963984540054) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double denom = 1.0 + z * z / nn;
  const double centre = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

inline std::string scenario_hash(const dataset::ScenarioConfig& cfg, const std::string& extra = "") {
  return hex64(fnv1a64(dataset::write_scenario_config(cfg) + extra));
}

// Trial i uses seed derive_seed(seed, i) and alternates the start side.
inline EvalReport evaluate(const dataset::ScenarioConfig& config, Policy& pol, std::size_t n_trials,
                           std::uint64_t seed, const orca::OrcaParams& orca_params = {},
                           const std::function<void(std::size_t, const EpisodeRun&)>& on_trial = {}) {
  if (n_trials == 0) throw InvalidArgument("evaluate: n_trials must be at least 1");
  EvalReport r;
  r.model = pol.name();
  r.scenario = config.name();
  r.trials = n_trials;
  r.seed = seed;
  r.config_hash = scenario_hash(config, "|" + pol.name() + "|" + std::to_string(seed));
  r.robot_visible_to_orca = config.robot_visible;
  double t_success = 0.0, t_all = 0.0, straight = 0.0;
  for (std::size_t i = 0; i < n_trials; ++i) {
    const auto run = run_episode(config, pol, derive_seed(seed, i), i, orca_params);
    const auto& first = run.log.states.front().robot;
    straight += (first.goal - first.position).norm() / first.v_pref;
    t_all += run.outcome.navigation_time;
    switch (run.outcome.kind) {
      case sim::OutcomeKind::Success:
        ++r.successes;
        t_success += run.outcome.navigation_time;
        break;
      case sim::OutcomeKind::Collision:
        ++r.collisions;
        break;
      case sim::OutcomeKind::Timeout:
        ++r.timeouts;
        break;
    }
    if (on_trial) on_trial(i, run);
  }
  const double n = static_cast<double>(n_trials);
  r.success_rate = static_cast<double>(r.successes) / n;
  r.collision_rate = static_cast<double>(r.collisions) / n;
  r.timeout_rate = static_cast<double>(r.timeouts) / n;
  if (r.successes > 0) r.mean_nav_time_success = t_success / static_cast<double>(r.successes);
  r.mean_nav_time_all = t_all / n;
  r.straight_line_time = straight / n;
  std::tie(r.ci_low, r.ci_high) = wilson_interval(r.successes, n_trials);
  return r;
}

inline io::json to_json(const EvalReport& r) {
  io::json j{{"model", r.model},
             {"scenario", r.scenario},
             {"trials", r.trials},
             {"success_rate", r.success_rate},
             {"collision_rate", r.collision_rate},
             {"timeout_rate", r.timeout_rate},
             {"mean_nav_time_all", r.mean_nav_time_all},
             {"success_ci95", {r.ci_low, r.ci_high}},
             {"straight_line_time", r.straight_line_time},
             {"config_hash", r.config_hash},
             {"seed", r.seed},
             {"robot_visible_to_orca_humans", r.robot_visible_to_orca},
             {"replay_humans_react", r.replay_humans_react}};
  j["mean_nav_time_success"] = std::isnan(r.mean_nav_time_success) ? io::json(nullptr) : io::json(r.mean_nav_time_success);
  return j;
}

struct ComparisonRow {
  std::string variant;
  EvalReport report;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;

  std::string to_text() const {
    std::size_t wv = 7, ws = 8;
    for (const auto& r : rows) {
      wv = std::max(wv, r.variant.size());
      ws = std::max(ws, r.report.scenario.size());
    }
    std::string out;
    char line[512];
    std::snprintf(line, sizeof line, "%-*s  %-*s  %7s  %9s  %7s  %8s  %8s\n", static_cast<int>(wv), "variant",
                  static_cast<int>(ws), "scenario", "success", "collision", "timeout", "nav_time", "time_all");
    out += line;
    for (const auto& r : rows) {
      const auto& e = r.report;
      std::snprintf(line, sizeof line, "%-*s  %-*s  %7.3f  %9.3f  %7.3f  %8.2f  %8.2f\n", static_cast<int>(wv),
                    r.variant.c_str(), static_cast<int>(ws), e.scenario.c_str(), e.success_rate,
                    e.collision_rate, e.timeout_rate, e.mean_nav_time_success, e.mean_nav_time_all);
      out += line;
    }
    return out;
  }
  io::json to_json() const {
    io::json j = io::json::array();
    for (const auto& r : rows) {
      auto e = eval::to_json(r.report);
      e["variant"] = r.variant;
      j.push_back(std::move(e));
    }
    return j;
  }
};

struct Variant {
  std::string name;
  Policy* policy = nullptr;
};

// One row per variant and scenario, every variant seeing the same trial seeds.
inline ComparisonTable compare_variants(const std::vector<Variant>& variants,
                                        const std::vector<dataset::ScenarioConfig>& scenarios,
                                        std::size_t n_trials, std::uint64_t seed,
                                        const orca::OrcaParams& orca_params = {}) {
  if (variants.size() < 2) throw InvalidArgument("compare_variants: need at least two variants");
  ComparisonTable t;
  for (const auto& sc : scenarios)
    for (const auto& v : variants) t.rows.push_back({v.name, evaluate(sc, *v.policy, n_trials, seed, orca_params)});
  return t;
}

// ---- attention similarity --------------------------------------------------

struct SimilarityRow {
  std::string scheme;
  double kl = 0.0;
  double cc = 0.0;
  bool reference = false;
};

struct AttentionReport {
  std::size_t records = 0;
  std::vector<SimilarityRow> humans;     // distributions restricted to humans
  std::vector<SimilarityRow> all_nodes;  // robot, humans and goal

  const SimilarityRow& row(const std::string& scheme, bool humans_only = true) const {
    for (const auto& r : humans_only ? humans : all_nodes)
      if (r.scheme == scheme && !r.reference) return r;
    throw InvalidArgument("no attention row named " + scheme);
  }

  std::string to_text() const {
    std::string out;
    char line[256];
    auto table = [&](const char* title, const std::vector<SimilarityRow>& rows) {
      std::snprintf(line, sizeof line, "%s (%zu records)\n%-22s  %8s  %8s\n", title, records, "scheme", "KL-D", "CC");
      out += line;
      for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-22s  %8.4f  %8.4f\n",
                      (r.reference ? "reference " + r.scheme : r.scheme).c_str(), r.kl, r.cc);
        out += line;
      }
    };
    table("humans", humans);
    out += '\n';
    table("all nodes", all_nodes);
    return out;
  }
  io::json to_json() const {
    auto rows = [](const std::vector<SimilarityRow>& v) {
      io::json j = io::json::array();
      for (const auto& r : v) j.push_back({{"scheme", r.scheme}, {"kl", r.kl}, {"cc", r.cc}, {"reference", r.reference}});
      return j;
    };
    return {{"records", records}, {"humans", rows(humans)}, {"all_nodes", rows(all_nodes)}};
  }
};

// Published similarity targets over humans, shown beside measured rows.
inline std::vector<SimilarityRow> reference_rows() {
  return {{"predicted", 0.49, 0.74, true}, {"distance", 0.99, 0.61, true}};
}

// Mean KL/CC of predicted, distance and uniform weights against the labels.
// Records without humans are skipped in the humans table.
inline AttentionReport attention_eval(const attention::AttentionNet& net,
                                      const std::vector<attention::AttentionRecord>& test,
                                      double sigma_sq = attention::kDistanceSigmaSq) {
  if (test.empty()) throw InvalidArgument("attention_eval: empty test set");
  using attention::AttentionLabel;
  struct Acc {
    double kl = 0.0, cc = 0.0;
    std::size_t n = 0;
    void add(const AttentionLabel& gt, const AttentionLabel& p) {
      kl += attention::kl_divergence(gt, p);
      cc += attention::correlation_coefficient(gt, p);
      ++n;
    }
    SimilarityRow row(const char* name) const {
      const double d = n ? static_cast<double>(n) : 1.0;
      return {name, kl / d, cc / d, false};
    }
  };
  Acc hp, hd, hu, ap, ad, au;
  for (const auto& r : test) {
    const auto pred = attention::predict_attention(net, r.scene);
    ap.add(r.label, pred);
    ad.add(r.label, attention::distance_weights_all_nodes(r.scene, sigma_sq));
    au.add(r.label, attention::uniform_label(r.label.size()));
    if (r.scene.humans.empty()) continue;
    const auto gt = attention::humans_only(r.label);
    hp.add(gt, attention::humans_only(pred));
    hd.add(gt, AttentionLabel{attention::distance_weights(r.scene, sigma_sq)});
    hu.add(gt, attention::uniform_label(gt.size()));
  }
  AttentionReport rep;
  rep.records = test.size();
  rep.humans = {hp.row("predicted"), hd.row("distance"), hu.row("uniform")};
  for (auto& r : reference_rows()) rep.humans.push_back(r);
  rep.all_nodes = {ap.row("predicted"), ad.row("distance"), au.row("uniform")};
  return rep;
}

}  // namespace gazenav::eval
