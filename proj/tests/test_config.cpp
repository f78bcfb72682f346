#include <gtest/gtest.h>

#include <filesystem>

#include "gazenav/cli.hpp"

using namespace gazenav;
using config::ConfigError;
using config::RunConfig;

namespace {

std::string tmp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gazenav_config_" + name)).string();
}

}  // namespace

TEST(RunConfigTest, DefaultsAndTypedAccess) {
  RunConfig c(cli::train_policy_schema());
  EXPECT_EQ(c.str("mode"), "uniform");
  EXPECT_EQ(c.count("rl_episodes"), 2000u);
  EXPECT_EQ(c.num("gamma"), 0.9);
  EXPECT_FALSE(c.flag("resume"));
  EXPECT_TRUE(c.empty("attention"));
  const auto sc = c.scenario();
  EXPECT_EQ(sc.n_humans, 5);
  EXPECT_EQ(sc.time_limit, 30.0);
}

TEST(RunConfigTest, UnknownKeysRejected) {
  RunConfig c(cli::train_attention_schema());
  EXPECT_THROW(c.set("learning_rate", "1"), ConfigError);
  EXPECT_THROW(c.set_assignment("epochs"), ConfigError);
  try {
    c.load_text("epochs = 3\n# comment\n\nbogus = 1\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:4"), std::string::npos) << e.what();
  }
  EXPECT_EQ(c.count("epochs"), 3u);
}

TEST(RunConfigTest, TypeErrors) {
  RunConfig c(cli::train_policy_schema());
  c.set("gamma", "abc");
  EXPECT_THROW(c.num("gamma"), ConfigError);
  c.set("rl_episodes", "-3");
  EXPECT_THROW(c.count("rl_episodes"), ConfigError);
  c.set("resume", "maybe");
  EXPECT_THROW(c.flag("resume"), ConfigError);
  c.set("n_humans", "x");
  EXPECT_THROW(c.scenario(), ConfigError);
  c.set("n_humans", "3");
  c.set("dt", "0");
  EXPECT_THROW(c.scenario(), ConfigError);
}

TEST(RunConfigTest, FilesThenOverrides) {
  io::write_text(tmp("a.cfg"), "n_humans = 7\nseed = 4\n");
  io::write_text(tmp("b.cfg"), "seed = 9\n");
  RunConfig c(cli::train_policy_schema());
  c.load_file(tmp("a.cfg"));
  c.load_file(tmp("b.cfg"));
  EXPECT_EQ(c.u64("seed"), 9u);
  c.set_assignment(" n_humans = 2 ");
  EXPECT_EQ(c.scenario().n_humans, 2);
}

TEST(RunConfigTest, ListsAndFlags) {
  RunConfig c(cli::evaluate_schema());
  c.set("policies", " a.ckpt, b.ckpt ,,c.ckpt");
  EXPECT_EQ(c.list("policies"), (std::vector<std::string>{"a.ckpt", "b.ckpt", "c.ckpt"}));
  EXPECT_TRUE(c.list("names").empty());
  for (const char* t : {"true", "1", "yes"}) {
    c.set("include_orca", t);
    EXPECT_TRUE(c.flag("include_orca"));
  }
}

TEST(RunConfigTest, ResolvedRoundTripReproducesHash) {
  RunConfig c(cli::train_policy_schema());
  c.set("seed", "17");
  c.set("mode", "distance");
  c.set("time_limit", "22.5");
  c.write_resolved(tmp("resolved.cfg"));
  RunConfig d(cli::train_policy_schema());
  d.load_file(tmp("resolved.cfg"));
  EXPECT_EQ(d.resolved(), c.resolved());
  EXPECT_EQ(d.hash(), c.hash());
  d.set("seed", "18");
  EXPECT_NE(d.hash(), c.hash());
}

TEST(RunConfigTest, ReplayNeedsFile) {
  RunConfig c(cli::evaluate_schema());
  c.set("kind", "replay");
  EXPECT_THROW(c.scenario(), ConfigError);
  io::write_text(tmp("scene.txt"), "# rate 2.5\n0 1 0 0\n10 1 4 0\n0 2 1 1\n10 2 1 5\n");
  c.set("replay_file", tmp("scene.txt"));
  const auto sc = c.scenario();
  ASSERT_TRUE(sc.replay);
  EXPECT_EQ(sc.replay->tracks.size(), 2u);
  EXPECT_EQ(sc.name(), "gazenav_config_scene");
}

TEST(RlConfigFrom, MapsKeys) {
  RunConfig c(cli::train_policy_schema());
  c.set("lr", "0.005");
  c.set("train_batches", "7");
  c.set("epsilon_decay", "0");
  c.set("green", "0.25");
  const auto rl = cli::rl_config_from(c);
  EXPECT_EQ(rl.learning_rate, 0.005);
  EXPECT_EQ(rl.train_batches, 7u);
  EXPECT_EQ(rl.epsilon_decay, 1u);
  EXPECT_EQ(rl.adjacency.green, 0.25);
  EXPECT_EQ(rl.il_episodes, policy::RLConfig::desk_scale().il_episodes);
  EXPECT_EQ(rl.rl_episodes, policy::RLConfig::desk_scale().rl_episodes);
  const auto defaults = cli::rl_config_from(RunConfig(cli::train_policy_schema()));
  EXPECT_EQ(defaults.learning_rate, policy::RLConfig::desk_scale().learning_rate);
  EXPECT_EQ(defaults.train_batches, policy::RLConfig::desk_scale().train_batches);
  c.set("gamma", "1.5");
  EXPECT_THROW(cli::rl_config_from(c), InvalidArgument);
}

TEST(ModeFrom, Kinds) {
  RunConfig c(cli::train_policy_schema());
  for (const auto& [text, kind] : std::vector<std::pair<std::string, policy::AttentionKind>>{
           {"uniform", policy::AttentionKind::Uniform},
           {"U", policy::AttentionKind::Uniform},
           {"distance", policy::AttentionKind::Distance},
           {"SA", policy::AttentionKind::SelfAttention}}) {
    c.set("mode", text);
    EXPECT_EQ(cli::mode_from(c).mode.kind, kind) << text;
  }
  c.set("mode", "distance");
  c.set("sigma_sq", "3.5");
  EXPECT_EQ(cli::mode_from(c).mode.sigma_sq, 3.5);
  c.set("mode", "gaze");
  EXPECT_THROW(cli::mode_from(c), cli::MissingData);
  c.set("attention", tmp("missing.ckpt"));
  EXPECT_THROW(cli::mode_from(c), cli::MissingData);
  attention::AttentionTraining t{attention::AttentionNet::create(1), {}, 0};
  const auto hash = attention::save_attention(tmp("att.ckpt"), t);
  c.set("attention", tmp("att.ckpt"));
  const auto m = cli::mode_from(c);
  EXPECT_EQ(m.mode.kind, policy::AttentionKind::Gaze);
  EXPECT_EQ(m.attention_hash, hash);
  c.set("mode", "eyes");
  EXPECT_THROW(cli::mode_from(c), ConfigError);
}

TEST(ScenarioFile, ParseErrorsCarryLine) {
  try {
    dataset::parse_scenario_config("n_humans = 3\n\ntime_limit = fast\n");
    FAIL();
  } catch (const dataset::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}
