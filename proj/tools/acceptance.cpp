// Acceptance run: one PASS/FAIL line per criterion. Outputs land in --work-dir.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "gazenav/cli.hpp"
#include "gazenav/gradcheck.hpp"

using namespace gazenav;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

sim::SceneState random_scene(Rng& rng, int n) {
  sim::SceneState s;
  s.robot.position = {uniform(rng, -1, 1), uniform(rng, -1, 1)};
  s.robot.velocity = {uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)};
  s.robot.goal = {uniform(rng, -4, 4), uniform(rng, 2, 6)};
  for (int i = 0; i < n; ++i) {
    sim::AgentState h;
    h.position = {uniform(rng, -6, 6), uniform(rng, -6, 6)};
    h.velocity = {uniform(rng, -0.7, 0.7), uniform(rng, -0.7, 0.7)};
    h.goal = h.position + h.velocity * 10.0;
    s.humans.push_back(h);
  }
  return s;
}

// ---- criteria --------------------------------------------------------------

Outcome gradients() {
  const auto sweep = nn::gradient_sweep(100);
  return {sweep.max_rel_error < 1e-4, "max relative error " + fmt("%.3g", sweep.max_rel_error) + " over " +
                                          std::to_string(sweep.checked) + " entries (worst: " + sweep.worst_case + ")"};
}

Outcome adjacency() {
  const auto net = policy::PolicyNet::create(1);
  const auto gaze = std::make_shared<const attention::AttentionNet>(attention::AttentionNet::create(2));
  const std::vector<policy::AttentionMode> modes{policy::AttentionMode::uniform(), policy::AttentionMode::distance(),
                                                 policy::AttentionMode::gaze(gaze),
                                                 policy::AttentionMode::self_attention()};
  Rng rng(3);
  double worst_row = 0.0;
  std::size_t zone_errors = 0, matrices = 0;
  for (const auto& m : modes)
    for (int n = 0; n <= 30; ++n)
      for (int rep = 0; rep < 5; ++rep) {
        const auto a = policy::build_adjacency(random_scene(rng, n), m, {}, &net);
        ++matrices;
        for (int r = 0; r <= n; ++r) worst_row = std::max(worst_row, std::fabs(a.row(r).sum() - 1.0));
        if (a.row(0).minCoeff() < 0.0) ++zone_errors;
        for (int i = 1; i <= n; ++i)
          for (int j = 0; j <= n; ++j)
            if (a(i, j) != ((j == 0 || j == i) ? 0.5 : 0.0)) ++zone_errors;
      }
  return {worst_row <= 1e-12 && zone_errors == 0, std::to_string(matrices) + " matrices, max |row sum - 1| " +
                                                      fmt("%.2g", worst_row) + ", zone mismatches " +
                                                      std::to_string(zone_errors)};
}

Outcome orca_safety() {
  const orca::OrcaParams params;
  const int steps = static_cast<int>(std::lround(60.0 / params.dt));
  std::size_t collisions = 0, unfinished = 0;
  double min_gap = kInf;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto agents = dataset::make_circle_crossing(10, 4.0, seed).initial.humans;
    bool hit = false;
    for (int s = 0; s < steps; ++s) {
      agents = orca::simulate_crowd_step(agents, params);
      for (std::size_t i = 0; i < agents.size(); ++i)
        for (std::size_t j = i + 1; j < agents.size(); ++j) {
          const double gap = (agents[i].position - agents[j].position).norm() - agents[i].radius - agents[j].radius;
          min_gap = std::min(min_gap, gap);
          hit |= gap < 0.0;
        }
    }
    collisions += hit;
    for (const auto& a : agents)
      if ((a.goal - a.position).norm() >= a.radius) {
        ++unfinished;
        break;
      }
  }
  return {collisions == 0 && unfinished == 0, "200 rollouts: " + std::to_string(collisions) + " with collisions, " +
                                                  std::to_string(unfinished) + " with agents short of goal, min gap " +
                                                  fmt("%.4f", min_gap) + " m"};
}

struct AttentionArtifacts {
  std::string checkpoint;
};

Outcome attention_pipeline(const fs::path& dir, AttentionArtifacts& art) {
  config::RunConfig gen(cli::gen_gaze_schema());
  gen.set("out", (dir / "records.jsonl").string());
  gen.set("episodes", "100");
  gen.set("seed", "1");
  std::ostringstream log;
  const auto n = cli::cmd_gen_gaze(gen, log);
  config::RunConfig tr(cli::train_attention_schema());
  tr.set("records", (dir / "records.jsonl").string());
  tr.set("out", (dir / "attention.ckpt").string());
  tr.set("epochs", "400");
  tr.set("seed", "1");
  const auto res = cli::cmd_train_attention(tr, log);
  art.checkpoint = (dir / "attention.ckpt").string();
  std::cout << res.report->to_text() << std::flush;
  const auto& p = res.report->row("predicted");
  const auto& d = res.report->row("distance");
  const auto& u = res.report->row("uniform");
  const bool ok = n >= 1000 && p.kl < d.kl && p.kl < u.kl && p.cc > d.cc && p.cc > u.cc;
  return {ok, std::to_string(n) + " records (" + std::to_string(res.train_size) + "/" + std::to_string(res.test_size) +
                  "), KL predicted " + fmt("%.4f", p.kl) + " distance " + fmt("%.4f", d.kl) + " uniform " +
                  fmt("%.4f", u.kl) + "; CC predicted " + fmt("%.4f", p.cc) + " distance " + fmt("%.4f", d.cc) +
                  " uniform " + fmt("%.4f", u.cc)};
}

Outcome metric_oracles() {
  Rng rng(4);
  auto random_label = [&](std::size_t n) {
    std::vector<double> w(n);
    double total = 0.0;
    for (auto& x : w) total += (x = uniform(rng, 0.0, 1.0) + 1e-3);
    for (auto& x : w) x /= total;
    return attention::AttentionLabel{w};
  };
  double worst_self_kl = 0.0, worst_self_cc = 0.0, min_kl = kInf;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 2 + uniform_index(rng, 10);
    const auto a = random_label(n), b = random_label(n);
    worst_self_kl = std::max(worst_self_kl, std::fabs(attention::kl_divergence(a, a)));
    worst_self_cc = std::max(worst_self_cc, std::fabs(attention::correlation_coefficient(a, a) - 1.0));
    min_kl = std::min(min_kl, attention::kl_divergence(a, b));
  }
  double worst_density = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double sigma = uniform(rng, 0.2, 2.0);
    std::vector<attention::GazeSample> gaze;
    const int g = 1 + static_cast<int>(uniform_index(rng, 5));
    for (int i = 0; i < g; ++i) gaze.push_back({uniform(rng, -0.1, 0.1), {uniform(rng, -3, 3), uniform(rng, -3, 3)}});
    std::vector<Vec2> nodes;
    const int n = 2 + static_cast<int>(uniform_index(rng, 6));
    for (int i = 0; i < n; ++i) nodes.push_back({uniform(rng, -3, 3), uniform(rng, -3, 3)});
    const auto l = attention::gaze_to_label(gaze, 0.0, nodes, sigma, 0.1);
    std::vector<double> dens(nodes.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (const auto& s : gaze) {
        const double dx = nodes[i].x - s.point.x, dy = nodes[i].y - s.point.y;
        dens[i] += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
      total += dens[i];
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) worst_density = std::max(worst_density, std::fabs(l[i] - dens[i] / total));
  }
  const bool ok = worst_self_kl <= 1e-12 && worst_self_cc <= 1e-12 && min_kl >= 0.0 && worst_density <= 1e-9;
  return {ok, "max |kl(x,x)| " + fmt("%.2g", worst_self_kl) + ", max |cc(x,x) - 1| " + fmt("%.2g", worst_self_cc) +
                  ", min KL " + fmt("%.3g", min_kl) + ", gaze label vs brute force " + fmt("%.2g", worst_density)};
}

struct PolicyRun {
  cli::TrainPolicyResult result;
  std::string checkpoint;
  double il_min = 0.0, il_final = 0.0;
};

PolicyRun train_variant(const fs::path& dir, const std::string& mode, const std::string& attention,
                        std::uint64_t seed, const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  config::RunConfig cfg(cli::train_policy_schema());
  cfg.set("out_dir", dir.string());
  cfg.set("mode", mode);
  cfg.set("attention", attention);
  cfg.set("seed", std::to_string(seed));
  for (const auto& [k, v] : extra) cfg.set(k, v);
  std::ofstream log(dir.string() + ".log");
  fs::create_directories(dir);
  PolicyRun run;
  const auto t0 = std::chrono::steady_clock::now();
  run.result = cli::cmd_train_policy(cfg, log);
  run.checkpoint = run.result.rl_checkpoint;
  if (!run.result.il_loss.empty()) {
    run.il_min = *std::min_element(run.result.il_loss.begin(), run.result.il_loss.end());
    run.il_final = run.result.il_loss.back();
  }
  std::cout << "  trained " << mode << " in "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s, trailing success "
            << policy::trailing_success(run.result.log) << std::endl;
  return run;
}

constexpr std::uint64_t kTrainSeed = 1;
constexpr std::uint64_t kEvalSeed = 20251;  // disjoint from the training streams

eval::ValuePolicy value_policy(const std::string& name, const PolicyRun& run, const std::string& attention) {
  auto loaded = policy::load_policy(run.checkpoint);
  policy::SelectionConfig sel;
  sel.adjacency = loaded.meta.adjacency;
  return eval::ValuePolicy(name, std::move(loaded.net), policy::resolve_mode(loaded.meta, attention), sel);
}

Outcome policy_training(const fs::path& dir, PolicyRun& uniform_run, std::size_t trials) {
  uniform_run = train_variant(dir / "U", "uniform", "", kTrainSeed);
  auto pol = value_policy("U-GCNRL", uniform_run, "");
  const dataset::ScenarioConfig sc;  // CircleCrossing, 5 ORCA humans
  const auto r = eval::evaluate(sc, pol, trials, kEvalSeed);
  io::write_text((dir / "U_eval.json").string(), eval::to_json(r).dump(2) + "\n");
  const double limit = 1.5 * r.straight_line_time;
  const bool ok = r.success_rate >= 0.85 && r.mean_nav_time_success <= limit;
  return {ok, "success " + fmt("%.3f", r.success_rate) + " over " + std::to_string(trials) + " held-out trials (95% CI " +
                  fmt("%.3f", r.ci_low) + "-" + fmt("%.3f", r.ci_high) + "), collisions " +
                  fmt("%.3f", r.collision_rate) + ", mean nav time " + fmt("%.2f", r.mean_nav_time_success) +
                  " s vs limit " + fmt("%.2f", limit) + " s; checkpoint from episode " +
                  std::to_string(uniform_run.result.best_episode) + " (validation success " +
                  fmt("%.2f", uniform_run.result.best_success) + ")"};
}

Outcome ablation(const fs::path& dir, const AttentionArtifacts& art, PolicyRun* uniform_run, std::size_t trials) {
  std::vector<std::pair<std::string, PolicyRun>> runs;
  runs.emplace_back("G-GCNRL", train_variant(dir / "G", "gaze", art.checkpoint, kTrainSeed));
  runs.emplace_back("D-GCNRL", train_variant(dir / "D", "distance", "", kTrainSeed));
  runs.emplace_back("U-GCNRL", uniform_run ? *uniform_run : train_variant(dir / "U", "uniform", "", kTrainSeed));
  runs.emplace_back("SA-GCNRL", train_variant(dir / "SA", "self_attention", "", kTrainSeed));
  std::vector<eval::ValuePolicy> pols;
  pols.reserve(runs.size());
  std::string il;
  bool stable = true;
  for (const auto& [name, run] : runs) {
    pols.push_back(value_policy(name, run, art.checkpoint));
    stable &= run.result.finished && run.il_final < 10.0 * run.il_min;
    il += " " + name + " " + fmt("%.2e", run.il_final) + "/" + fmt("%.2e", run.il_min);
  }
  std::vector<eval::Variant> variants;
  for (auto& p : pols) variants.push_back({p.name(), &p});
  const auto table = eval::compare_variants(variants, {dataset::ScenarioConfig{}}, trials, kEvalSeed);
  io::write_text((dir / "ablation.txt").string(), table.to_text());
  io::write_text((dir / "ablation.json").string(), table.to_json().dump(2) + "\n");
  std::cout << table.to_text() << std::flush;
  const bool has_g = table.rows.size() == 4 && table.rows[0].variant == "G-GCNRL";
  return {stable && has_g, "4 variants trained and evaluated; final/min IL loss:" + il};
}

Outcome determinism(const fs::path& dir) {
  const std::vector<std::pair<std::string, std::string>> small{
      {"il_episodes", "10"}, {"il_epochs", "5"}, {"rl_episodes", "20"}, {"epsilon_decay", "10"}};
  std::string logs[2], reports[2], ckpt[2];
  for (int k = 0; k < 2; ++k) {
    const auto sub = dir / ("run" + std::to_string(k));
    const auto run = train_variant(sub, "self_attention", "", 99, small);
    logs[k] = io::read_text((sub / "train_log.jsonl").string()) + io::read_text((sub / "il_loss.json").string());
    ckpt[k] = io::read_text(run.checkpoint);
    auto pol = value_policy("SA", run, "");
    reports[k] = eval::to_json(eval::evaluate(dataset::ScenarioConfig{}, pol, 10, kEvalSeed)).dump();
  }
  const bool ok = logs[0] == logs[1] && reports[0] == reports[1] && ckpt[0] == ckpt[1];
  return {ok, std::string("training logs ") + (logs[0] == logs[1] ? "identical" : "differ") + ", checkpoints " +
                  (ckpt[0] == ckpt[1] ? "identical" : "differ") + ", eval reports " +
                  (reports[0] == reports[1] ? "identical" : "differ")};
}

Outcome parser() {
  Rng rng(5);
  double worst_rt = 0.0;
  for (int k = 0; k < 20; ++k) {
    std::string text = "# rate 2.5\n";
    char buf[96];
    for (int f = 0; f < 30; ++f)
      for (int p = 0; p < 6; ++p) {
        if (uniform01(rng) < 0.3) continue;
        std::snprintf(buf, sizeof buf, "%d %d %.6f %.6f\n", f * 10, p, uniform(rng, -20, 20), uniform(rng, -20, 20));
        text += buf;
      }
    const auto a = dataset::parse_trajectory_file(text);
    const auto b = dataset::parse_trajectory_file(dataset::write_trajectory_file(a));
    for (const auto& [id, t] : a.tracks) {
      const auto& u = b.tracks.at(id);
      if (u.size() != t.size()) return {false, "round trip changed track length"};
      for (std::size_t i = 0; i < t.size(); ++i) worst_rt = std::max(worst_rt, (t[i].position - u[i].position).norm());
    }
  }
  struct Bad {
    std::string text;
    std::size_t line;
  };
  const std::vector<Bad> bad{{"# rate 10\n0 1 0 0\n0 2 abc 0\n", 3},
                             {"# rate 10\n0 1 0 0\n\n10 1 1\n", 4},
                             {"# rate 10\n5 7 0 0\n3 7 1 1\n", 3},
                             {"# rate 10\n0 1 0 0 extra\n", 2}};
  std::size_t line_ok = 0;
  for (const auto& b : bad) {
    try {
      dataset::parse_trajectory_file(b.text);
    } catch (const dataset::ParseError& e) {
      line_ok += e.line() == b.line;
    }
  }
  double worst_interp = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int f0 = static_cast<int>(uniform_index(rng, 50)), f1 = f0 + 1 + static_cast<int>(uniform_index(rng, 12));
    auto micro = [&] { return std::round(uniform(rng, -5, 5) * 1e6) / 1e6; };  // exactly what %.6f writes
    const double x0 = micro(), y0 = micro(), x1 = micro(), y1 = micro();
    const double rate = 2.5;
    char buf[160];
    std::snprintf(buf, sizeof buf, "# rate 2.5\n%d 1 %.6f %.6f\n%d 1 %.6f %.6f\n", f0, x0, y0, f1, x1, y1);
    const auto scene = dataset::parse_trajectory_file(buf);
    const double u = uniform01(rng);
    const double t = (f0 + u * (f1 - f0)) / rate;
    const auto h = dataset::humans_at_time(scene, t);
    if (h.size() != 1) return {false, "interpolation lost the pedestrian"};
    const double ex = x0 + (x1 - x0) * u, ey = y0 + (y1 - y0) * u;
    const double vx = (x1 - x0) * rate / (f1 - f0), vy = (y1 - y0) * rate / (f1 - f0);
    worst_interp = std::max({worst_interp, std::hypot(h[0].position.x - ex, h[0].position.y - ey),
                             std::hypot(h[0].velocity.x - vx, h[0].velocity.y - vy)});
  }
  const bool ok = worst_rt <= 1e-6 && line_ok == bad.size() && worst_interp <= 1e-9;
  return {ok, "round trip max error " + fmt("%.2g", worst_rt) + " m, " + std::to_string(line_ok) + "/" +
                  std::to_string(bad.size()) + " errors with the right line, interpolation max error " +
                  fmt("%.2g", worst_interp)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("gazenav acceptance run");
  std::string work = "acceptance_work";
  std::vector<std::string> only;
  std::size_t trials = 100;
  bool strict = false;
  app.add_option("--work-dir", work, "output directory");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  app.add_option("--trials", trials, "held-out evaluation trials");
  app.add_flag("--strict", strict, "exit non-zero when a criterion fails");
  CLI11_PARSE(app, argc, argv);
  const fs::path dir = fs::absolute(work);
  fs::create_directories(dir);

  AttentionArtifacts art;
  std::optional<PolicyRun> uniform_run;
  using Fn = std::function<Outcome()>;
  const std::vector<std::pair<std::string, Fn>> criteria{
      {"gradient-correctness", gradients},
      {"adjacency-structure", adjacency},
      {"orca-safety", orca_safety},
      {"attention-pipeline", [&] { return attention_pipeline(dir, art); }},
      {"attention-metric-oracles", metric_oracles},
      {"policy-training", [&] {
         uniform_run.emplace();
         return policy_training(dir, *uniform_run, trials);
       }},
      {"ablation-harness", [&] {
         if (art.checkpoint.empty()) attention_pipeline(dir, art);
         return ablation(dir, art, uniform_run ? &*uniform_run : nullptr, trials);
       }},
      {"determinism", [&] { return determinism(dir / "determinism"); }},
      {"parser", parser},
  };
  const std::set<std::string> wanted(only.begin(), only.end());
  std::size_t failed = 0;
  std::vector<std::string> lines;
  for (const auto& [name, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string line = std::string(o.pass ? "PASS " : "FAIL ") + name + ": " + o.detail + " [" + fmt("%.1f", secs) + " s]";
    std::cout << line << std::endl;
    lines.push_back(line);
    failed += !o.pass;
  }
  std::string summary;
  for (const auto& l : lines) summary += l + "\n";
  io::write_text((dir / "acceptance.txt").string(), summary);
  std::cout << "\n" << summary << lines.size() - failed << "/" << lines.size() << " criteria passed" << std::endl;
  return strict && failed ? 1 : 0;
}
