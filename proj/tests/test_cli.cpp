// Runs the built `gazenav` binary end to end on small configurations.

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "gazenav/io.hpp"
#include "gazenav/validate.hpp"

namespace fs = std::filesystem;
using namespace gazenav;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(GAZENAV_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("gazenav_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

std::string data(const std::string& name) { return std::string(GAZENAV_DATA) + "/" + name; }

bool valid(const std::string& path) {
  const auto r = validate::validate_file(path);
  if (!r.ok) ADD_FAILURE() << path << ": " << r.message;
  return r.ok;
}

const std::string kSmallRun =
    " -s n_humans=2 -s il_episodes=3 -s il_epochs=2 -s rl_episodes=6 -s epsilon_decay=3 -s train_batches=2"
    " -s batch_size=20 -s time_limit=10 -s state_every=2 -s val_every=3 -s val_trials=4";

}  // namespace

TEST(Cli, HelpListsSubcommands) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* c : {"gen-gaze", "train-attention", "train-policy", "evaluate", "replay", "serve-teleop", "validate"})
    EXPECT_NE(r.out.find(c), std::string::npos) << c;
  EXPECT_NE(run("").code, 0);
  EXPECT_EQ(run("--keys train-policy").code, 0);
}

TEST(Cli, UnknownKeyRejected) {
  const auto d = dir("unknown");
  const auto r = run("gen-gaze -s out=" + d + "/r.jsonl -s bogus=1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("bogus"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(d + "/r.jsonl"));
  io::write_text(d + "/bad.cfg", "episodes = 2\nlearning_rate = 3\n");
  const auto f = run("gen-gaze -c " + d + "/bad.cfg");
  EXPECT_EQ(f.code, 2);
  EXPECT_NE(f.out.find("bad.cfg:2"), std::string::npos) << f.out;
}

TEST(Cli, GenGazeEmptyAndDeterministic) {
  const auto d = dir("gen");
  const auto empty = run("gen-gaze -s episodes=0 -s out=" + d + "/empty.jsonl");
  EXPECT_EQ(empty.code, 0);
  EXPECT_NE(empty.out.find("warning"), std::string::npos);
  EXPECT_TRUE(io::read_text(d + "/empty.jsonl").empty());
  const std::string args = "gen-gaze -s episodes=3 -s n_humans=3 -s seed=5 -s out=";
  ASSERT_EQ(run(args + d + "/a.jsonl").code, 0);
  ASSERT_EQ(run(args + d + "/b.jsonl").code, 0);
  const auto a = io::read_text(d + "/a.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, io::read_text(d + "/b.jsonl"));
  EXPECT_TRUE(valid(d + "/a.jsonl"));
  EXPECT_TRUE(valid(d + "/a.jsonl.config"));
  ASSERT_EQ(run("gen-gaze -s episodes=3 -s n_humans=3 -s seed=6 -s out=" + d + "/c.jsonl").code, 0);
  EXPECT_NE(a, io::read_text(d + "/c.jsonl"));
}

TEST(Cli, ReplayScenarioFromData) {
  const auto d = dir("replay_scene");
  const auto r = run("gen-gaze -c " + data("replay.cfg") + " -s replay_file=" + data("crossing.txt") +
                     " -s episodes=2 -s out=" + d + "/r.jsonl");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(valid(d + "/r.jsonl"));
  EXPECT_TRUE(valid(data("crossing.txt")));
}

TEST(Cli, AttentionTrainingWritesCheckpointAndMetrics) {
  const auto d = dir("att");
  ASSERT_EQ(run("gen-gaze -s episodes=4 -s out=" + d + "/r.jsonl").code, 0);
  const auto r = run("train-attention -s records=" + d + "/r.jsonl -s epochs=3 -s out=" + d + "/att.ckpt");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"/att.ckpt", "/att.ckpt.metrics.json", "/att.ckpt.config"}) EXPECT_TRUE(valid(d + f));
  const auto metrics = io::json::parse(io::read_text(d + "/att.ckpt.metrics.json"));
  EXPECT_EQ(metrics["loss_curve"].size(), 3u);
  EXPECT_EQ(run("train-attention -s records=" + d + "/missing.jsonl -s out=" + d + "/x.ckpt").code, 4);
}

TEST(Cli, TrainPolicyImitationOnly) {
  const auto d = dir("il_only");
  const auto r = run("train-policy -s out_dir=" + d + kSmallRun + " -s rl_episodes=0");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(valid(d + "/il.ckpt"));
  EXPECT_TRUE(valid(d + "/rl.ckpt"));
  EXPECT_TRUE(valid(d + "/config.resolved"));
  const auto loss = io::json::parse(io::read_text(d + "/il_loss.json"));
  EXPECT_EQ(loss.size(), 2u);
  EXPECT_TRUE(io::read_text(d + "/train_log.jsonl").empty());
}

TEST(Cli, GazeModeNeedsAttention) {
  const auto d = dir("gaze_missing");
  const auto r = run("train-policy -s mode=gaze -s out_dir=" + d + kSmallRun);
  EXPECT_EQ(r.code, 4);
  EXPECT_FALSE(fs::exists(d + "/il.ckpt"));
}

TEST(Cli, ResumeMatchesUninterrupted) {
  const auto full = dir("full");
  const auto part = dir("part");
  ASSERT_EQ(run("train-policy -s out_dir=" + full + kSmallRun).code, 0);
  const auto first = run("train-policy -s out_dir=" + part + kSmallRun + " -s stop_after=4");
  ASSERT_EQ(first.code, 0) << first.out;
  EXPECT_FALSE(fs::exists(part + "/rl.ckpt"));
  const auto second = run("train-policy -s out_dir=" + part + kSmallRun + " -s resume=true");
  ASSERT_EQ(second.code, 0) << second.out;
  EXPECT_NE(second.out.find("resuming at episode 4"), std::string::npos) << second.out;
  EXPECT_EQ(io::read_text(full + "/rl.ckpt"), io::read_text(part + "/rl.ckpt"));
  EXPECT_EQ(io::read_text(full + "/train_log.jsonl"), io::read_text(part + "/train_log.jsonl"));
  EXPECT_TRUE(valid(full + "/train_log.jsonl"));
  EXPECT_TRUE(valid(full + "/state.ckpt"));
}

TEST(Cli, ValidationPicksCheckpoint) {
  const auto d = dir("select");
  const auto r = run("train-policy -s out_dir=" + d + kSmallRun);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("validation at episode 3"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("validation at episode 6"), std::string::npos) << r.out;
  EXPECT_TRUE(valid(d + "/rl_final.ckpt"));
  EXPECT_TRUE(valid(d + "/best.ckpt"));
  // rl.ckpt carries the selected weights, re-saved with their own metadata
  EXPECT_EQ(io::read_text(d + "/rl.ckpt"), io::read_text(d + "/best.ckpt"));
  const auto meta = io::json::parse(io::read_text(d + "/rl.ckpt.json"));
  const auto ep = meta["meta"]["episodes"].get<int>();
  EXPECT_TRUE(ep == 3 || ep == 6) << ep;
  EXPECT_EQ(run("train-policy -s out_dir=" + d + kSmallRun + " -s val_trials=0").code, 2);
}

TEST(Cli, EvaluateRobotOnlyAndReplay) {
  const auto d = dir("eval");
  const auto r = run("evaluate -c " + data("robot_only.cfg") + " -s include_straight=true -s trials=5 -s out_dir=" + d);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = io::json::parse(io::read_text(d + "/report.json"));
  ASSERT_EQ(report.size(), 1u) << report.dump();
  const auto& row = report[0];
  EXPECT_EQ(row["success_rate"], 1.0) << row.dump();
  EXPECT_FALSE(row["config_hash"].get<std::string>().empty());
  EXPECT_TRUE(valid(d + "/report.json"));
  std::string traj;
  for (const auto& e : fs::directory_iterator(d))
    if (e.path().string().find(".trajectory.jsonl") != std::string::npos) traj = e.path().string();
  ASSERT_FALSE(traj.empty());
  EXPECT_TRUE(valid(traj));
  const auto rep = run("replay -s log=" + traj);
  EXPECT_EQ(rep.code, 0) << rep.out;
  EXPECT_NE(rep.out.find("recorded outcome Success, replayed Success"), std::string::npos) << rep.out;
  EXPECT_EQ(run("evaluate -s out_dir=" + d).code, 4);
}

TEST(Cli, EvaluateTrainedPolicyAgainstBaselines) {
  const auto d = dir("eval_policy");
  ASSERT_EQ(run("train-policy -s out_dir=" + d + "/run" + kSmallRun + " -s rl_episodes=0").code, 0);
  const auto r = run("evaluate -s policies=" + d + "/run/rl.ckpt -s names=mine -s include_orca=true -s trials=3" +
                     " -s n_humans=2 -s extra_scenarios=" + data("dense.cfg") + " -s trajectories=0 -s out_dir=" + d);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = io::json::parse(io::read_text(d + "/report.json"));
  EXPECT_EQ(report.size(), 4u);
  EXPECT_NE(r.out.find("mine"), std::string::npos);
}

TEST(Cli, ValidateFlagsCorruptFiles) {
  const auto d = dir("validate");
  io::write_text(d + "/bad.jsonl", "{\"t\": 1}\nnot json\n");
  const auto r = run("validate " + d + "/bad.jsonl");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(run("validate " + data("crossing.txt")).code, 0);
  io::write_text(d + "/run.cfg", "seed = 3\ndt = 0\n");
  EXPECT_EQ(run("validate " + d + "/run.cfg").code, 2);
  io::write_text(d + "/run.cfg", "seed = 3\nn_humans = many\n");
  const auto line = run("validate " + d + "/run.cfg");
  EXPECT_NE(line.out.find("line 2"), std::string::npos) << line.out;
  EXPECT_EQ(run("validate " + data("replay.cfg") + " " + data("dense.cfg")).code, 0);
}
