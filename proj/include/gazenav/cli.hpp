#pragma once

// Command implementations behind the `gazenav` tool. Each takes a resolved
// RunConfig, writes its outputs and the resolved config, and returns a summary.

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "gazenav/attention.hpp"
#include "gazenav/config.hpp"
#include "gazenav/dataset.hpp"
#include "gazenav/env.hpp"
#include "gazenav/eval.hpp"
#include "gazenav/io.hpp"
#include "gazenav/policy.hpp"

namespace gazenav::cli {

namespace fs = std::filesystem;
using config::KeySpec;
using config::RunConfig;

class MissingData : public Error {
 public:
  using Error::Error;
};

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw MissingData(what + ": no path given");
  if (!fs::exists(path)) throw MissingData(what + ": " + path + " does not exist");
}

inline void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// ---- gen-gaze --------------------------------------------------------------

inline std::vector<KeySpec> gen_gaze_schema() {
  return config::concat(
      {{"out", "records.jsonl", "output attention records"},
       {"episodes", "100", "scenes to roll"},
       {"seed", "0", "root seed"},
       {"stride", "3", "label every stride-th state"},
       {"oracle_k", "2", "humans looked at per state"},
       {"p_goal", "0.3", "chance of a glance at the goal"},
       {"noise", "0", "gaze jitter (m)"},
       {"sigma", "0.7", "label kernel width (m)"},
       {"window", "0.1", "gaze window (s)"},
       {"session_file", "", "convert a recorded gaze session instead"},
       {"trajectory_file", "", "trajectory log paired with session_file"}},
      config::scenario_keys());
}

inline std::vector<attention::AttentionRecord> generate_oracle_records(const dataset::ScenarioConfig& scenario,
                                                                       std::size_t episodes, std::uint64_t seed,
                                                                       std::size_t stride,
                                                                       const attention::OracleParams& oracle,
                                                                       double sigma, double window,
                                                                       const orca::OrcaParams& orca_params = {}) {
  std::vector<attention::AttentionRecord> out;
  if (episodes == 0) return out;
  env::CrowdEnv env(scenario, orca_params);
  stride = std::max<std::size_t>(stride, 1);
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    env.reset(derive_seed(seed, 2 * ep), ep);
    Rng rng(derive_seed(seed, 2 * ep + 1));
    std::size_t step = 0;
    for (;;) {
      const auto& s = env.scene();
      if (step % stride == 0 && (s.robot.goal - s.robot.position).norm() > sim::kFrameEpsilon) {
        const auto gaze = attention::oracle_gaze(s, oracle, rng);
        auto label = attention::gaze_to_label(gaze, s.time, attention::node_positions(s), sigma, window);
        out.push_back({s, std::move(label), scenario.name(), static_cast<int>(step), static_cast<int>(ep)});
      }
      if (env.done()) break;
      env.step(policy::orca_robot_action(s, orca_params));
      ++step;
    }
  }
  return out;
}

inline std::size_t cmd_gen_gaze(const RunConfig& cfg, std::ostream& log = std::cout) {
  const auto out = cfg.str("out");
  std::vector<attention::AttentionRecord> records;
  if (!cfg.empty("session_file")) {
    require_file(cfg.str("session_file"), "session_file");
    require_file(cfg.str("trajectory_file"), "trajectory_file");
    const auto gaze = attention::parse_gaze_session(io::read_text(cfg.str("session_file")));
    const auto traj = eval::parse_trajectory_log(io::read_text(cfg.str("trajectory_file")));
    records = attention::records_from_session(traj.states, gaze, "teleop:" + gaze.session_id);
  } else {
    attention::OracleParams oracle;
    oracle.k = static_cast<int>(cfg.integer("oracle_k"));
    oracle.p_goal = cfg.num("p_goal");
    oracle.noise = cfg.num("noise");
    records = generate_oracle_records(cfg.scenario(), cfg.count("episodes"), cfg.u64("seed"), cfg.count("stride"),
                                      oracle, cfg.num("sigma"), cfg.num("window"));
    if (cfg.count("episodes") == 0) log << "warning: no scenarios requested, writing an empty record file\n";
  }
  ensure_parent(out);
  io::write_text(out, attention::write_records(records));
  cfg.write_resolved(out + ".config");
  log << records.size() << " attention records written to " << out << "\n";
  return records.size();
}

// ---- train-attention -------------------------------------------------------

inline std::vector<KeySpec> train_attention_schema() {
  return {{"records", "records.jsonl", "comma-separated record files"},
          {"out", "attention.ckpt", "output checkpoint"},
          {"epochs", "400", "training epochs"},
          {"batch_size", "100", "minibatch size"},
          {"lr", "0.001", "Adam learning rate"},
          {"seed", "0", "root seed"},
          {"split", "0.7", "training fraction"},
          {"resume", "", "checkpoint to continue from"}};
}

struct AttentionSplit {
  std::vector<attention::AttentionRecord> train, test;
};

inline AttentionSplit split_records(std::vector<attention::AttentionRecord> all, double fraction, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  shuffle(all.begin(), all.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(all.size())));
  AttentionSplit s;
  s.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, all.size())));
  s.test.assign(all.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, all.size())), all.end());
  return s;
}

struct TrainAttentionResult {
  attention::AttentionTraining training;
  std::optional<eval::AttentionReport> report;
  std::string hash;
  std::size_t train_size = 0, test_size = 0;
};

inline TrainAttentionResult cmd_train_attention(const RunConfig& cfg, std::ostream& log = std::cout) {
  std::vector<attention::AttentionRecord> all;
  for (const auto& path : cfg.list("records")) {
    require_file(path, "records");
    auto part = attention::parse_records(io::read_text(path));
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (all.empty()) throw MissingData("no attention records to train on");
  auto split = split_records(std::move(all), cfg.num("split"), cfg.u64("seed"));
  if (split.train.empty()) throw MissingData("training split is empty");
  nn::TrainConfig tc;
  tc.epochs = cfg.count("epochs");
  tc.batch_size = cfg.count("batch_size");
  tc.learning_rate = cfg.num("lr");
  tc.seed = cfg.u64("seed");
  attention::AttentionTraining start{attention::AttentionNet::create(tc.seed), {}, 0};
  if (!cfg.empty("resume")) {
    require_file(cfg.str("resume"), "resume");
    start = attention::load_attention(cfg.str("resume"));
  }
  TrainAttentionResult res;
  res.training = attention::train_attention(split.train, tc, std::move(start));
  res.train_size = split.train.size();
  res.test_size = split.test.size();
  const auto out = cfg.str("out");
  ensure_parent(out);
  res.hash = attention::save_attention(out, res.training);
  io::json metrics{{"loss_curve", res.training.loss_curve},
                   {"epochs_done", res.training.epochs_done},
                   {"train_records", res.train_size},
                   {"test_records", res.test_size},
                   {"hash", res.hash},
                   {"config_hash", cfg.hash()}};
  if (!split.test.empty()) {
    res.report = eval::attention_eval(res.training.net, split.test);
    metrics["similarity"] = res.report->to_json();
    io::write_text(out + ".similarity.txt", res.report->to_text());
    log << res.report->to_text();
  }
  io::write_text(out + ".metrics.json", metrics.dump(2) + "\n");
  cfg.write_resolved(out + ".config");
  log << "attention network trained for " << res.training.epochs_done << " epochs on " << res.train_size
      << " records; checkpoint " << out << " (" << res.hash << ")\n";
  return res;
}

// ---- train-policy ----------------------------------------------------------

inline std::vector<KeySpec> train_policy_schema() {
  return config::concat(
      {{"out_dir", "policy_run", "output directory"},
       {"mode", "uniform", "gaze, distance, uniform or self_attention"},
       {"attention", "", "attention checkpoint for gaze mode"},
       {"sigma_sq", "2", "distance-mode kernel width (m^2)"},
       {"green", "0.5", "robot influence on humans in the adjacency"},
       {"seed", "0", "root seed"},
       {"gamma", "0.9", "discount"},
       {"il_episodes", "300", "demonstration episodes"},
       {"il_epochs", "50", "imitation epochs"},
       {"il_lr", "0.001", "imitation learning rate"},
       {"rl_episodes", "2000", "reinforcement episodes"},
       {"epsilon_start", "0.5", "initial exploration rate"},
       {"epsilon_end", "0.1", "final exploration rate"},
       {"epsilon_decay", "400", "episodes of linear epsilon decay"},
       {"target_update", "50", "episodes between target refreshes"},
       {"train_batches", "50", "gradient steps after each episode"},
       {"batch_size", "100", "minibatch size"},
       {"lr", "0.001", "reinforcement learning rate"},
       {"buffer_capacity", "100000", "replay buffer capacity"},
       {"sample_k", "0", "actions evaluated per step (0 = all)"},
       {"resume", "false", "continue from out_dir/state.ckpt"},
       {"stop_after", "0", "stop after this many RL episodes (0 = run all)"},
       {"state_every", "100", "episodes between training-state saves"},
       {"val_every", "250", "episodes between validation runs (0 = keep the final policy)"},
       {"val_trials", "50", "greedy validation episodes per run"}},
      config::scenario_keys());
}

inline policy::RLConfig rl_config_from(const RunConfig& cfg) {
  policy::RLConfig c;
  c.gamma = cfg.num("gamma");
  c.il_episodes = cfg.count("il_episodes");
  c.il_epochs = cfg.count("il_epochs");
  c.il_learning_rate = cfg.num("il_lr");
  c.rl_episodes = cfg.count("rl_episodes");
  c.epsilon_start = cfg.num("epsilon_start");
  c.epsilon_end = cfg.num("epsilon_end");
  c.epsilon_decay = std::max<std::size_t>(1, cfg.count("epsilon_decay"));
  c.target_update = cfg.count("target_update");
  c.train_batches = cfg.count("train_batches");
  c.batch_size = cfg.count("batch_size");
  c.learning_rate = cfg.num("lr");
  c.buffer_capacity = cfg.count("buffer_capacity");
  c.sample_k = cfg.count("sample_k");
  c.adjacency.green = cfg.num("green");
  c.seed = cfg.u64("seed");
  c.validate();
  return c;
}

struct ModeSetup {
  policy::AttentionMode mode;
  std::string attention_hash;
};

inline ModeSetup mode_from(const RunConfig& cfg) {
  const auto kind = policy::attention_kind_from_string(cfg.str("mode"));
  if (!kind) throw config::ConfigError("mode: expected gaze, distance, uniform or self_attention");
  ModeSetup m;
  switch (*kind) {
    case policy::AttentionKind::Uniform:
      m.mode = policy::AttentionMode::uniform();
      break;
    case policy::AttentionKind::Distance:
      m.mode = policy::AttentionMode::distance(cfg.num("sigma_sq"));
      break;
    case policy::AttentionKind::SelfAttention:
      m.mode = policy::AttentionMode::self_attention();
      break;
    case policy::AttentionKind::Gaze: {
      require_file(cfg.str("attention"), "attention");
      auto t = attention::load_attention(cfg.str("attention"), &m.attention_hash);
      m.mode = policy::AttentionMode::gaze(std::make_shared<const attention::AttentionNet>(std::move(t.net)));
      break;
    }
  }
  return m;
}

struct TrainPolicyResult {
  policy::PolicyNet net;
  std::vector<double> il_loss;
  std::vector<policy::EpisodeLog> log;
  std::string il_checkpoint, rl_checkpoint;
  bool finished = false;
  // validation success of the policy written to rl_checkpoint, -1 without validation
  double best_success = -1.0;
  std::size_t best_episode = 0;
};

inline TrainPolicyResult cmd_train_policy(const RunConfig& cfg, std::ostream& log = std::cout) {
  const fs::path dir = cfg.str("out_dir");
  fs::create_directories(dir);
  cfg.write_resolved((dir / "config.resolved").string());
  const auto rl = rl_config_from(cfg);
  const auto setup = mode_from(cfg);
  const auto scenario = cfg.scenario();
  env::CrowdEnv env(scenario);
  policy::PolicyMeta meta;
  meta.mode = setup.mode.kind;
  meta.attention_hash = setup.attention_hash;
  meta.sigma_sq = setup.mode.sigma_sq;
  meta.adjacency = rl.adjacency;

  TrainPolicyResult res;
  res.il_checkpoint = (dir / "il.ckpt").string();
  res.rl_checkpoint = (dir / "rl.ckpt").string();
  const std::string state_path = (dir / "state.ckpt").string();
  const std::string best_path = (dir / "best.ckpt").string();

  std::optional<policy::RLState> state;
  if (cfg.flag("resume") && fs::exists(state_path)) {
    io::json extra;
    state = policy::load_rl_state(state_path, &extra);
    if (extra.value("attention_hash", std::string()) != meta.attention_hash ||
        extra.value("mode", std::string()) != std::string(policy::to_string(meta.mode)))
      throw nn::IncompatibleCheckpoint("training state was produced with a different attention setup");
    res.il_loss = extra.value("il_loss", std::vector<double>{});
    res.best_success = extra.value("best_success", -1.0);
    res.best_episode = extra.value("best_episode", std::size_t{0});
    log << "resuming at episode " << state->episodes_done << "\n";
  } else {
    auto net = policy::PolicyNet::create(derive_seed(rl.seed, 1));
    std::vector<policy::Transition> demos;
    if (rl.il_episodes > 0) {
      auto d = policy::collect_demonstrations(env, {}, rl.il_episodes, derive_seed(rl.seed, 2), rl.gamma);
      std::size_t ok = 0;
      for (const auto& e : d.episodes) ok += e.status == policy::StepStatus::Success;
      log << "demonstrations: " << d.transitions.size() << " transitions from " << d.episodes.size()
          << " episodes (" << ok << " successful)\n";
      nn::TrainConfig tc;
      tc.epochs = rl.il_epochs;
      tc.learning_rate = rl.il_learning_rate;
      tc.batch_size = rl.batch_size;
      tc.seed = derive_seed(rl.seed, 3);
      tc.optimizer = rl.optimizer;
      res.il_loss = policy::imitation_learning(net, d.transitions, setup.mode, tc, rl.adjacency).loss_curve;
      demos = std::move(d.transitions);
      if (!res.il_loss.empty())
        log << "imitation loss " << res.il_loss.front() << " -> " << res.il_loss.back() << "\n";
    }
    meta.stage = "il";
    policy::save_policy(res.il_checkpoint, net, meta);
    io::write_text((dir / "il_loss.json").string(), io::json(res.il_loss).dump() + "\n");
    state = policy::start_rl(net, demos, rl);
  }

  const std::size_t stop = cfg.count("stop_after") ? cfg.count("stop_after") : rl.rl_episodes;
  const std::size_t every = std::max<std::size_t>(1, cfg.count("state_every"));
  const std::size_t val_every = cfg.count("val_every");
  const std::size_t val_trials = cfg.count("val_trials");
  if (val_every > 0 && val_trials == 0) throw config::ConfigError("val_trials must be positive when val_every is set");
  // Validation seeds come from their own stream, apart from training and from evaluate's default seeds.
  const std::uint64_t val_seed = derive_seed(rl.seed, 0x76616c6964ULL);
  io::json state_meta{{"mode", std::string(policy::to_string(meta.mode))},
                      {"attention_hash", meta.attention_hash},
                      {"il_loss", res.il_loss},
                      {"config_hash", cfg.hash()},
                      {"best_success", res.best_success},
                      {"best_episode", res.best_episode}};
  auto validate_now = [&](const policy::RLState& s) {
    policy::SelectionConfig sel;
    sel.adjacency = rl.adjacency;
    eval::ValuePolicy pol("validation", s.net, setup.mode, sel);
    const auto r = eval::evaluate(scenario, pol, val_trials, val_seed);
    log << "validation at episode " << s.episodes_done << ": success " << r.success_rate << ", collisions "
        << r.collision_rate << "\n";
    // ties go to the later, longer-trained policy
    if (r.success_rate >= res.best_success) {
      res.best_success = r.success_rate;
      res.best_episode = s.episodes_done;
      auto m = meta;
      m.stage = "rl";
      m.episodes = s.episodes_done;
      policy::save_policy(best_path, s.net, m);
      state_meta["best_success"] = res.best_success;
      state_meta["best_episode"] = res.best_episode;
    }
  };
  auto on_episode = [&](const policy::EpisodeLog& l, const policy::RLState& s) {
    if ((l.episode + 1) % 100 == 0)
      log << "episode " << l.episode + 1 << ": trailing success " << policy::trailing_success(s.log) << ", epsilon "
          << l.epsilon << ", buffer " << l.buffer_size << "\n";
    if (val_every > 0 && (l.episode + 1) % val_every == 0) validate_now(s);
    if ((l.episode + 1) % every == 0) policy::save_rl_state(state_path, s, state_meta);
  };
  *state = policy::rl_training(std::move(*state), env, setup.mode, rl, stop, on_episode);
  policy::save_rl_state(state_path, *state, state_meta);
  io::write_text((dir / "train_log.jsonl").string(), policy::write_log(state->log));
  res.log = state->log;
  res.net = state->net;
  res.finished = state->episodes_done >= rl.rl_episodes;
  if (res.finished) {
    meta.stage = "rl";
    meta.episodes = state->episodes_done;
    if (val_every > 0 && rl.rl_episodes > 0) {
      if (state->episodes_done % val_every != 0) validate_now(*state);
      policy::save_policy((dir / "rl_final.ckpt").string(), state->net, meta);
      auto best = policy::load_policy(best_path);
      policy::save_policy(res.rl_checkpoint, best.net, best.meta);
      log << "policy from episode " << res.best_episode << " (validation success " << res.best_success
          << ") written to " << res.rl_checkpoint << "; final policy in rl_final.ckpt\n";
    } else {
      policy::save_policy(res.rl_checkpoint, state->net, meta);
      log << "policy written to " << res.rl_checkpoint << "; trailing success "
          << policy::trailing_success(state->log) << "\n";
    }
  } else {
    log << "stopped after " << state->episodes_done << " episodes; resume with resume=true\n";
  }
  return res;
}

// ---- evaluate --------------------------------------------------------------

inline std::vector<KeySpec> evaluate_schema() {
  return config::concat({{"policies", "", "comma-separated policy checkpoints"},
                         {"names", "", "comma-separated display names"},
                         {"attention", "", "attention checkpoint for gaze-mode policies"},
                         {"include_orca", "false", "add the ORCA robot as a variant"},
                         {"include_straight", "false", "add a straight-line robot as a variant"},
                         {"extra_scenarios", "", "comma-separated scenario config files"},
                         {"trials", "100", "trials per variant and scenario"},
                         {"seed", "12345", "root seed of the trial seeds"},
                         {"out_dir", "eval", "output directory"},
                         {"trajectories", "3", "trajectory logs written per variant and scenario"},
                         {"attention_records", "", "labeled records for the attention similarity table"}},
                        config::scenario_keys());
}

struct EvaluateResult {
  eval::ComparisonTable table;
  std::optional<eval::AttentionReport> attention;
};

inline EvaluateResult cmd_evaluate(const RunConfig& cfg, std::ostream& log = std::cout) {
  const fs::path dir = cfg.str("out_dir");
  fs::create_directories(dir);
  cfg.write_resolved((dir / "config.resolved").string());
  std::vector<std::unique_ptr<eval::Policy>> policies;
  const auto paths = cfg.list("policies");
  const auto names = cfg.list("names");
  for (std::size_t i = 0; i < paths.size(); ++i) {
    require_file(paths[i], "policy");
    auto loaded = policy::load_policy(paths[i]);
    auto mode = policy::resolve_mode(loaded.meta, cfg.str("attention"));
    policy::SelectionConfig sel;
    sel.adjacency = loaded.meta.adjacency;
    const std::string name = i < names.size() ? names[i]
                                              : std::string(policy::short_name(loaded.meta.mode)) + "-GCNRL";
    policies.push_back(std::make_unique<eval::ValuePolicy>(name, std::move(loaded.net), std::move(mode), sel));
  }
  if (cfg.flag("include_orca")) policies.push_back(std::make_unique<eval::OrcaPolicy>());
  if (cfg.flag("include_straight"))
    policies.push_back(std::make_unique<eval::ScriptedPolicy>(eval::straight_line_policy()));
  std::vector<dataset::ScenarioConfig> scenarios{cfg.scenario()};
  for (const auto& p : cfg.list("extra_scenarios")) {
    require_file(p, "extra_scenarios");
    RunConfig sc(config::scenario_keys());
    sc.load_file(p);
    scenarios.push_back(sc.scenario());
  }
  EvaluateResult res;
  const auto trials = cfg.count("trials");
  const auto seed = cfg.u64("seed");
  const auto n_traj = cfg.count("trajectories");
  for (const auto& sc : scenarios) {
    for (auto& p : policies) {
      auto report = eval::evaluate(sc, *p, trials, seed, {}, [&](std::size_t i, const eval::EpisodeRun& run) {
        if (i < n_traj)
          io::write_text((dir / (p->name() + "_" + sc.name() + "_" + std::to_string(i) + ".trajectory.jsonl")).string(),
                         eval::write_trajectory_log(run.log));
      });
      report.config_hash = hex64(fnv1a64(cfg.hash() + report.config_hash));
      res.table.rows.push_back({p->name(), std::move(report)});
    }
  }
  if (!res.table.rows.empty()) {
    io::write_text((dir / "report.json").string(), res.table.to_json().dump(2) + "\n");
    io::write_text((dir / "report.txt").string(), res.table.to_text());
    log << res.table.to_text();
  }
  if (!cfg.empty("attention_records")) {
    require_file(cfg.str("attention_records"), "attention_records");
    require_file(cfg.str("attention"), "attention");
    const auto records = attention::parse_records(io::read_text(cfg.str("attention_records")));
    const auto net = attention::load_attention(cfg.str("attention")).net;
    res.attention = eval::attention_eval(net, records);
    io::write_text((dir / "attention.json").string(), res.attention->to_json().dump(2) + "\n");
    io::write_text((dir / "attention.txt").string(), res.attention->to_text());
    log << res.attention->to_text();
  }
  if (res.table.rows.empty() && !res.attention) throw MissingData("nothing to evaluate: give policies or attention_records");
  return res;
}

// ---- replay ----------------------------------------------------------------

inline std::vector<KeySpec> replay_schema() {
  return {{"log", "", "trajectory log to replay"}, {"every", "1", "print every n-th state"}};
}

// Prints a trajectory log step by step and re-checks its outcome; returns false on mismatch.
inline bool cmd_replay(const RunConfig& cfg, std::ostream& out = std::cout) {
  require_file(cfg.str("log"), "log");
  const auto log = eval::parse_trajectory_log(io::read_text(cfg.str("log")));
  const auto every = std::max<std::size_t>(1, cfg.count("every"));
  char line[256];
  out << "model " << log.model << ", " << log.states.size() << " states\n";
  std::snprintf(line, sizeof line, "%8s %8s %8s %9s %8s\n", "t", "x", "y", "goal_dist", "d_min");
  out << line;
  for (std::size_t i = 0; i < log.states.size(); ++i) {
    if (i % every != 0 && i + 1 != log.states.size()) continue;
    const auto& s = log.states[i];
    const auto prox = sim::detect_collision(s);
    std::snprintf(line, sizeof line, "%8.2f %8.3f %8.3f %9.3f %8.3f\n", s.time, s.robot.position.x,
                  s.robot.position.y, (s.robot.goal - s.robot.position).norm(), prox.d_min);
    out << line;
  }
  const auto& last = log.states.back();
  sim::OutcomeKind replayed = sim::OutcomeKind::Timeout;
  if (sim::detect_collision(last).collision)
    replayed = sim::OutcomeKind::Collision;
  else if (sim::reached_goal(last, last.robot.radius))
    replayed = sim::OutcomeKind::Success;
  out << "recorded outcome " << sim::to_string(log.outcome) << ", replayed " << sim::to_string(replayed) << " after "
      << log.nav_time << " s\n";
  return replayed == log.outcome;
}

}  // namespace gazenav::cli
