// gazenav: gaze data generation, attention and policy training, evaluation,
// trajectory replay, the teleoperation server and file validation.

#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gazenav/cli.hpp"
#include "gazenav/teleop.hpp"
#include "gazenav/validate.hpp"

using namespace gazenav;

namespace {

std::vector<config::KeySpec> serve_teleop_schema() {
  return config::concat({{"port", "8765", "TCP port (0 picks a free one)"},
                         {"any_address", "false", "listen on all interfaces instead of loopback"},
                         {"out_dir", "sessions", "where finished sessions are written"},
                         {"tick_ms", "250", "wall-clock milliseconds per simulation step"},
                         {"seed", "0", "root seed of session scenes"},
                         {"max_sessions", "0", "exit after this many finished sessions (0 = never)"}},
                        config::scenario_keys());
}

struct Options {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.configs, "key = value config file (repeatable, later files win)");
  cmd->add_option("-s,--set", o.sets, "override one key: key=value (repeatable)");
}

config::RunConfig resolve(const std::vector<config::KeySpec>& schema, const Options& o) {
  config::RunConfig cfg(schema);
  for (const auto& f : o.configs) cfg.load_file(f);
  for (const auto& s : o.sets) cfg.set_assignment(s);
  return cfg;
}

void print_keys(const std::vector<config::KeySpec>& schema) {
  for (const auto& k : schema) std::cout << "  " << k.name << " = " << k.default_value << "    # " << k.help << "\n";
}

teleop::TeleopServer* g_server = nullptr;

int serve_teleop(const config::RunConfig& cfg) {
  teleop::ServerConfig sc;
  sc.scenario = cfg.scenario();
  sc.port = static_cast<int>(cfg.integer("port"));
  sc.any_address = cfg.flag("any_address");
  sc.out_dir = cfg.str("out_dir");
  sc.tick_ms = static_cast<int>(cfg.integer("tick_ms"));
  sc.seed = cfg.u64("seed");
  const auto max_sessions = cfg.count("max_sessions");
  std::filesystem::create_directories(sc.out_dir);
  cfg.write_resolved((std::filesystem::path(sc.out_dir) / "server.config").string());
  teleop::TeleopServer server(sc);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGPIPE, SIG_IGN);
  std::cout << "teleop server listening on port " << server.port() << std::endl;
  std::thread watcher;
  if (max_sessions > 0)
    watcher = std::thread([&] {
      while (server.finished_sessions() < max_sessions) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      server.stop();
    });
  server.run();
  if (watcher.joinable()) {
    server.stop();
    watcher.join();
  }
  g_server = nullptr;
  for (const auto& f : server.written()) std::cout << "session written: " << f.gaze << " " << f.trajectory << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaze-modulated crowd navigation toolkit"};
  app.require_subcommand(1);
  bool show_keys = false;
  app.add_flag("--keys", show_keys, "list the config keys of the chosen command and exit");

  struct Command {
    std::string name, help;
    std::vector<config::KeySpec> schema;
    Options opts;
    CLI::App* app = nullptr;
  };
  std::vector<Command> commands{
      {"gen-gaze", "generate labeled attention records", cli::gen_gaze_schema(), {}, nullptr},
      {"train-attention", "train the gaze attention network", cli::train_attention_schema(), {}, nullptr},
      {"train-policy", "imitation then reinforcement learning of a value policy", cli::train_policy_schema(), {},
       nullptr},
      {"evaluate", "seeded evaluation and comparison tables", cli::evaluate_schema(), {}, nullptr},
      {"replay", "print and re-check a trajectory log", cli::replay_schema(), {}, nullptr},
      {"serve-teleop", "WebSocket teleoperation server", serve_teleop_schema(), {}, nullptr},
  };
  for (auto& c : commands) {
    c.app = app.add_subcommand(c.name, c.help);
    add_config_options(c.app, c.opts);
  }
  std::vector<std::string> validate_files;
  auto* validate_cmd = app.add_subcommand("validate", "check files written by this tool");
  validate_cmd->add_option("files", validate_files, "files to check")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate_cmd->parsed()) {
      bool all_ok = true;
      for (const auto& f : validate_files) {
        const auto r = validate::validate_file(f);
        std::cout << (r.ok ? "ok   " : "FAIL ") << f << " [" << r.kind << "]";
        if (r.ok) std::cout << " " << r.items << " items";
        if (!r.message.empty()) std::cout << ": " << r.message;
        std::cout << "\n";
        all_ok = all_ok && r.ok;
      }
      return all_ok ? 0 : 2;
    }
    for (auto& c : commands) {
      if (!c.app->parsed()) continue;
      if (show_keys) {
        print_keys(c.schema);
        return 0;
      }
      const auto cfg = resolve(c.schema, c.opts);
      if (c.name == "gen-gaze") {
        cli::cmd_gen_gaze(cfg);
      } else if (c.name == "train-attention") {
        cli::cmd_train_attention(cfg);
      } else if (c.name == "train-policy") {
        cli::cmd_train_policy(cfg);
      } else if (c.name == "evaluate") {
        cli::cmd_evaluate(cfg);
      } else if (c.name == "replay") {
        return cli::cmd_replay(cfg) ? 0 : 3;
      } else if (c.name == "serve-teleop") {
        return serve_teleop(cfg);
      }
      return 0;
    }
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cli::MissingData& e) {
    std::cerr << "missing data: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
