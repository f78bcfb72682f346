#pragma once

// Teleoperation sessions: a human steers the robot with velocity commands while
// cursor positions are recorded as gaze. The server speaks JSON text frames over
// WebSocket, one state frame per tick.
//
// Client -> server: {type:"control", vx, vy} {type:"cursor", x, y} {type:"start"} {type:"reset"}
// Server -> client: {type:"state", session, t, robot, humans[], goal, status, outcome?}
//                   {type:"error", message}

#include <atomic>
#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gazenav/attention.hpp"
#include "gazenav/dataset.hpp"
#include "gazenav/env.hpp"
#include "gazenav/eval.hpp"
#include "gazenav/io.hpp"
#include "gazenav/ws.hpp"

namespace gazenav::teleop {

enum class SessionStatus { Lobby, Running, Finished };

inline std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Lobby:
      return "Lobby";
    case SessionStatus::Running:
      return "Running";
    case SessionStatus::Finished:
      return "Finished";
  }
  return "?";
}

struct SessionFiles {
  std::string gaze;
  std::string trajectory;
};

class TeleopSession {
 public:
  TeleopSession(std::string id, const dataset::ScenarioConfig& scenario, std::uint64_t seed,
                const orca::OrcaParams& orca_params = {})
      : id_(std::move(id)), env_(scenario, orca_params) {
    env_.reset(seed);
    states_.push_back(env_.scene());
  }

  const std::string& id() const { return id_; }
  SessionStatus status() const { return status_; }
  const sim::SceneState& scene() const { return env_.scene(); }
  const std::vector<sim::SceneState>& states() const { return states_; }
  const std::vector<attention::GazeSample>& gaze() const { return gaze_; }
  Vec2 control() const { return control_; }

  enum class Reply { Ok, Reset };

  // Applies one client message. Throws InvalidArgument for malformed or misplaced messages.
  Reply handle(const io::json& msg) {
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
      throw InvalidArgument("message needs a string 'type'");
    const auto type = msg["type"].get<std::string>();
    if (type == "control") {
      Vec2 v{io::require_number(msg, "vx"), io::require_number(msg, "vy")};
      if (!v.finite()) throw InvalidArgument("control must be finite");
      const double vp = env_.scene().robot.v_pref;
      if (v.norm() > vp) v = normalized(v) * vp;
      control_ = v;
    } else if (type == "cursor") {
      const Vec2 p{io::require_number(msg, "x"), io::require_number(msg, "y")};
      if (!p.finite()) throw InvalidArgument("cursor must be finite");
      cursor_ = p;
      if (status_ == SessionStatus::Running) gaze_.push_back({env_.scene().time, p});
    } else if (type == "start") {
      if (status_ != SessionStatus::Lobby) throw InvalidArgument("start is only valid in the lobby");
      status_ = SessionStatus::Running;
    } else if (type == "reset") {
      return Reply::Reset;
    } else {
      throw InvalidArgument("unknown message type '" + type + "'");
    }
    return Reply::Ok;
  }

  // Advances one step while Running; returns true when this tick finished the session.
  bool tick() {
    if (status_ != SessionStatus::Running) return false;
    env_.step({control_.x, control_.y});
    states_.push_back(env_.scene());
    // The cursor stays put between events, so every recorded state gets a sample.
    if (cursor_) gaze_.push_back({env_.scene().time, *cursor_});
    if (env_.done()) {
      status_ = SessionStatus::Finished;
      return true;
    }
    return false;
  }

  io::json state_frame() const {
    auto j = io::scene_to_json(env_.scene());
    j["type"] = "state";
    j["session"] = id_;
    j["status"] = std::string(to_string(status_));
    j["dt"] = env_.dt();
    if (status_ == SessionStatus::Finished) j["outcome"] = std::string(sim::to_string(policy::to_outcome(env_.status())));
    return j;
  }

  eval::TrajectoryLog trajectory() const {
    eval::TrajectoryLog log;
    log.model = "teleop";
    log.states = states_;
    log.outcome = policy::to_outcome(env_.status());
    log.nav_time = env_.scene().time;
    return log;
  }

  attention::GazeSession gaze_session(double sigma = attention::kDefaultSigma,
                                      double window = attention::kDefaultWindow) const {
    attention::GazeSession g;
    g.session_id = id_;
    g.sigma = sigma;
    g.window = window;
    g.samples = gaze_;
    return g;
  }

  SessionFiles write_files(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    SessionFiles f{(std::filesystem::path(dir) / (id_ + ".gaze.jsonl")).string(),
                   (std::filesystem::path(dir) / (id_ + ".trajectory.jsonl")).string()};
    io::write_text(f.gaze, attention::write_gaze_session(gaze_session()));
    io::write_text(f.trajectory, eval::write_trajectory_log(trajectory()));
    return f;
  }

 private:
  std::string id_;
  env::CrowdEnv env_;
  SessionStatus status_ = SessionStatus::Lobby;
  Vec2 control_;
  std::optional<Vec2> cursor_;
  std::vector<sim::SceneState> states_;
  std::vector<attention::GazeSample> gaze_;
};

struct ServerConfig {
  dataset::ScenarioConfig scenario;
  orca::OrcaParams orca;
  std::string out_dir = "sessions";
  int port = 8765;
  bool any_address = false;
  int tick_ms = 250;
  std::uint64_t seed = 0;
  bool interpolate = true;  // hint for clients rendering between ticks
};

// One thread per connection; each connection owns one session at a time.
class TeleopServer {
 public:
  explicit TeleopServer(ServerConfig cfg) : cfg_(std::move(cfg)), listener_(cfg_.port, cfg_.any_address) {
    dataset::validate_scenario(cfg_.scenario);
    if (cfg_.tick_ms <= 0) throw InvalidArgument("tick_ms must be positive");
  }
  ~TeleopServer() {
    stop();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

  int port() const { return listener_.port(); }
  void stop() { stop_ = true; }
  std::size_t finished_sessions() const { return finished_; }
  std::vector<SessionFiles> written() const {
    std::lock_guard lock(mu_);
    return written_;
  }

  // Serves until stop(); returns after every connection thread has ended.
  void run() {
    while (!stop_) {
      const int fd = listener_.accept(50);
      if (fd < 0) continue;
      workers_.emplace_back([this, fd] { serve(fd); });
    }
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    workers_.clear();
  }

 private:
  std::unique_ptr<TeleopSession> new_session() {
    const auto n = counter_++;
    const auto seed = derive_seed(cfg_.seed, n);
    return std::make_unique<TeleopSession>("session-" + std::to_string(n) + "-" + hex64(seed).substr(0, 8),
                                           cfg_.scenario, seed, cfg_.orca);
  }

  void send_state(ws::Connection& c, const TeleopSession& s) {
    auto j = s.state_frame();
    j["interpolate"] = cfg_.interpolate;
    c.send_text(j.dump());
  }

  void serve(int fd) {
    ws::Connection conn(fd, false);
    try {
      conn.accept_handshake();
      auto session = new_session();
      send_state(conn, *session);
      using clock = std::chrono::steady_clock;
      auto next_tick = clock::now() + std::chrono::milliseconds(cfg_.tick_ms);
      while (!stop_) {
        const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(next_tick - clock::now()).count();
        if (wait > 0) {
          if (auto text = conn.receive(static_cast<int>(wait))) {
            try {
              if (session->handle(io::json::parse(*text)) == TeleopSession::Reply::Reset) {
                session = new_session();
                send_state(conn, *session);
              }
            } catch (const std::exception& e) {
              conn.send_text(io::json{{"type", "error"}, {"message", e.what()}}.dump());
            }
          }
          continue;
        }
        next_tick += std::chrono::milliseconds(cfg_.tick_ms);
        if (session->tick()) {
          auto files = session->write_files(cfg_.out_dir);
          {
            std::lock_guard lock(mu_);
            written_.push_back(std::move(files));
          }
          ++finished_;
        }
        send_state(conn, *session);
      }
      conn.send_close();
    } catch (const ws::SocketError&) {
      // client went away; the unfinished session is dropped
    } catch (const ws::ProtocolError&) {
    }
  }

  ServerConfig cfg_;
  ws::Listener listener_;
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> counter_{0};
  std::atomic<std::size_t> finished_{0};
  mutable std::mutex mu_;
  std::vector<SessionFiles> written_;
  std::vector<std::thread> workers_;
};

}  // namespace gazenav::teleop
