#pragma once

// Graph-based deep V-learning: node features, the attention-modulated crowd
// adjacency, the embedding/GCN/value networks, one-step lookahead action
// selection, ORCA demonstrations, imitation learning and the RL loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gazenav/attention.hpp"
#include "gazenav/checkpoint.hpp"
#include "gazenav/common.hpp"
#include "gazenav/env.hpp"
#include "gazenav/io.hpp"
#include "gazenav/nn.hpp"
#include "gazenav/orca.hpp"
#include "gazenav/reward.hpp"
#include "gazenav/sim.hpp"

namespace gazenav::policy {

using nn::Index;
using nn::Matrix;

inline constexpr Index kRobotDim = 6;
inline constexpr Index kNodeDim = 7;
inline constexpr Index kFeatureDim = kRobotDim + kNodeDim;
inline constexpr Index kEmbedDim = 100;
inline constexpr Index kHiddenDim = 100;
inline constexpr std::size_t kBufferCapacity = 100000;

// ---- features --------------------------------------------------------------

// One row per node [s_r | s_n]; row 0 is the robot, rows 1..N the humans.
inline Matrix featurize(const sim::SceneState& scene, bool lenient = false) {
  const auto frame = sim::Frame::from(scene.robot, lenient);
  const auto robot = frame.to_local(scene.robot);
  const Index n = static_cast<Index>(scene.humans.size()) + 1;
  Matrix f(n, kFeatureDim);
  const double rr = robot.radius;
  const double d_g = (scene.robot.goal - scene.robot.position).norm();
  f.leftCols(kRobotDim).rowwise() =
      (Eigen::RowVectorXd(kRobotDim) << d_g, robot.v_pref, robot.heading, rr, robot.velocity.x, robot.velocity.y)
          .finished();
  f.row(0).rightCols(kNodeDim) << 0.0, 0.0, robot.velocity.x, robot.velocity.y, rr, 0.0, rr + rr;
  for (std::size_t i = 0; i < scene.humans.size(); ++i) {
    const auto h = frame.to_local(scene.humans[i]);
    const double d_r = (scene.humans[i].position - scene.robot.position).norm();
    f.row(static_cast<Index>(i) + 1).rightCols(kNodeDim) << h.position.x, h.position.y, h.velocity.x,
        h.velocity.y, h.radius, d_r, h.radius + rr;
  }
  return f;
}

// ---- attention modes -------------------------------------------------------

enum class AttentionKind { Gaze, Distance, Uniform, SelfAttention };

inline std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::Gaze:
      return "gaze";
    case AttentionKind::Distance:
      return "distance";
    case AttentionKind::Uniform:
      return "uniform";
    case AttentionKind::SelfAttention:
      return "self_attention";
  }
  return "?";
}

inline std::optional<AttentionKind> attention_kind_from_string(std::string_view s) {
  if (s == "gaze" || s == "G") return AttentionKind::Gaze;
  if (s == "distance" || s == "D") return AttentionKind::Distance;
  if (s == "uniform" || s == "U") return AttentionKind::Uniform;
  if (s == "self_attention" || s == "SA") return AttentionKind::SelfAttention;
  return std::nullopt;
}

inline std::string_view short_name(AttentionKind k) {
  switch (k) {
    case AttentionKind::Gaze:
      return "G";
    case AttentionKind::Distance:
      return "D";
    case AttentionKind::Uniform:
      return "U";
    case AttentionKind::SelfAttention:
      return "SA";
  }
  return "?";
}

struct AttentionMode {
  AttentionKind kind = AttentionKind::Uniform;
  std::shared_ptr<const attention::AttentionNet> gaze_net;  // Gaze only
  double sigma_sq = attention::kDistanceSigmaSq;             // Distance only

  static AttentionMode uniform() { return {}; }
  static AttentionMode distance(double sigma_sq = attention::kDistanceSigmaSq) {
    return {AttentionKind::Distance, nullptr, sigma_sq};
  }
  static AttentionMode gaze(std::shared_ptr<const attention::AttentionNet> net) {
    if (!net) throw InvalidArgument("gaze mode needs an attention network");
    return {AttentionKind::Gaze, std::move(net), attention::kDistanceSigmaSq};
  }
  static AttentionMode self_attention() { return {AttentionKind::SelfAttention, nullptr, 0.0}; }
};

struct AdjacencyOptions {
  double green = 0.5;  // robot -> human influence, before normalization
  double blue_diagonal = 0.5;
};

// Raw red row for the parameter-free modes, over {robot, humans}.
inline std::vector<double> red_row(const sim::SceneState& scene, const AttentionMode& mode,
                                   bool lenient = false) {
  const std::size_t n = scene.humans.size() + 1;
  const double share = 1.0 / static_cast<double>(n);
  switch (mode.kind) {
    case AttentionKind::Uniform:
    case AttentionKind::SelfAttention:
      return std::vector<double>(n, share);
    case AttentionKind::Distance: {
      std::vector<double> row(n, share);
      if (n == 1) return row;
      const auto w = attention::distance_weights(scene, mode.sigma_sq);
      for (std::size_t i = 0; i < w.size(); ++i) row[i + 1] = (1.0 - share) * w[i];
      return row;
    }
    case AttentionKind::Gaze: {
      const auto label =
          attention::predict_attention(*mode.gaze_net, attention::attention_input(scene, lenient));
      std::vector<double> row(label.weights.begin(), label.weights.end() - 1);
      const double s = std::accumulate(row.begin(), row.end(), 0.0);
      for (double& v : row) v = s > 0.0 ? v / s : share;
      return row;
    }
  }
  return std::vector<double>(n, share);
}

inline Matrix assemble_adjacency(const std::vector<double>& red, const AdjacencyOptions& opt = {}) {
  const Index n = static_cast<Index>(red.size());
  if (n == 0) throw InvalidArgument("assemble_adjacency: empty red row");
  Matrix a = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) a(0, j) = red[static_cast<std::size_t>(j)];
  for (Index i = 1; i < n; ++i) {
    a(i, 0) = opt.green;
    a(i, i) = opt.blue_diagonal;
  }
  return nn::row_normalize(a);
}

// Red rows of a batch of scenes in Gaze mode, one attention forward for all of them.
inline std::vector<std::vector<double>> gaze_red_rows(const attention::AttentionNet& net,
                                                      const std::vector<const sim::SceneState*>& scenes,
                                                      bool lenient) {
  nn::GraphBatch graph;
  Index rows = 0;
  std::vector<Matrix> inputs;
  inputs.reserve(scenes.size());
  for (const auto* s : scenes) {
    inputs.push_back(attention::attention_input(*s, lenient));
    rows += inputs.back().rows();
    graph.add(attention::star_adjacency(static_cast<int>(inputs.back().rows())));
  }
  Matrix x(rows, 4);
  for (std::size_t k = 0; k < inputs.size(); ++k) x.middleRows(graph.offsets[k], inputs[k].rows()) = inputs[k];
  const Matrix w =
      attention::segment_softmax(nn::forward(net.net, x, nn::Mode::Eval, nullptr, nullptr, &graph), graph);
  std::vector<std::vector<double>> out;
  out.reserve(scenes.size());
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const Index n = inputs[k].rows() - 1;  // drop the goal node
    std::vector<double> row(static_cast<std::size_t>(n));
    double s = 0.0;
    for (Index j = 0; j < n; ++j) s += row[static_cast<std::size_t>(j)] = w(graph.offsets[k] + j, 0);
    for (double& v : row) v = s > 0.0 ? v / s : 1.0 / static_cast<double>(n);
    out.push_back(std::move(row));
  }
  return out;
}

// ---- networks --------------------------------------------------------------

struct PolicyNet {
  nn::Network embed;
  nn::Network gcn;
  nn::Network value;
  nn::Network score;  // self-attention scores; trained only in that mode

  static PolicyNet create(std::uint64_t seed) {
    using nn::LayerSpec;
    Rng rng(seed);
    PolicyNet p;
    p.embed = nn::Network({LayerSpec::linear(kFeatureDim, kEmbedDim), LayerSpec::relu()}, rng);
    p.gcn = nn::Network({LayerSpec::graph_conv(kEmbedDim, kEmbedDim), LayerSpec::relu(),
                         LayerSpec::graph_conv(kEmbedDim, kEmbedDim), LayerSpec::relu()},
                        rng);
    p.value = nn::Network({LayerSpec::linear(kEmbedDim + kRobotDim, kHiddenDim), LayerSpec::relu(),
                           LayerSpec::linear(kHiddenDim, kHiddenDim), LayerSpec::relu(),
                           LayerSpec::linear(kHiddenDim, 1)},
                          rng);
    p.score = nn::Network({LayerSpec::linear(kEmbedDim, kHiddenDim), LayerSpec::relu(),
                           LayerSpec::linear(kHiddenDim, 1)},
                          rng);
    return p;
  }

  template <typename F>
  void for_each_network(F&& f) {
    f("embed", embed);
    f("gcn", gcn);
    f("value", value);
    f("score", score);
  }
  template <typename F>
  void for_each_network(F&& f) const {
    f("embed", embed);
    f("gcn", gcn);
    f("value", value);
    f("score", score);
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_network([&](std::string_view, const nn::Network& net) { n += net.params.parameter_count(); });
    return n;
  }
};

// Softmax of the score network over one graph's embedded nodes.
inline std::vector<double> self_attention_scores(const nn::Network& score, const Matrix& embedded) {
  const Matrix logits = nn::forward(score, embedded, nn::Mode::Eval);
  const Matrix w = nn::softmax_rows(logits.transpose());
  return {w.data(), w.data() + w.size()};
}

// Stacked features of many scenes with their block-diagonal adjacency.
struct PolicyBatch {
  Matrix features;
  Matrix robot_state;  // one s_r row per scene
  nn::GraphBatch graph;
};

inline PolicyBatch make_batch(const std::vector<const sim::SceneState*>& scenes, const AttentionMode& mode,
                              const AdjacencyOptions& opt = {}, bool lenient = true) {
  PolicyBatch b;
  std::vector<Matrix> feats;
  feats.reserve(scenes.size());
  Index rows = 0;
  for (const auto* s : scenes) {
    feats.push_back(featurize(*s, lenient));
    rows += feats.back().rows();
  }
  std::vector<std::vector<double>> reds;
  if (mode.kind == AttentionKind::Gaze) reds = gaze_red_rows(*mode.gaze_net, scenes, lenient);
  b.features.resize(rows, kFeatureDim);
  b.robot_state.resize(static_cast<Index>(scenes.size()), kRobotDim);
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const Index at = b.graph.total;
    b.features.middleRows(at, feats[k].rows()) = feats[k];
    b.robot_state.row(static_cast<Index>(k)) = feats[k].row(0).leftCols(kRobotDim);
    b.graph.add(assemble_adjacency(mode.kind == AttentionKind::Gaze ? reds[k] : red_row(*scenes[k], mode), opt));
  }
  return b;
}

struct PolicyCache {
  nn::ForwardCache embed, score, gcn, value;
  Matrix sa_weights;
};

// Values of every scene in the batch (B x 1). In self-attention mode the red rows
// of `batch.graph` are overwritten with the score-net weights.
inline Matrix policy_forward(const PolicyNet& net, PolicyBatch& batch, const AttentionMode& mode,
                             PolicyCache* cache = nullptr) {
  const Matrix e = nn::forward(net.embed, batch.features, nn::Mode::Eval, nullptr, cache ? &cache->embed : nullptr);
  if (mode.kind == AttentionKind::SelfAttention) {
    const Matrix logits = nn::forward(net.score, e, nn::Mode::Eval, nullptr, cache ? &cache->score : nullptr);
    const Matrix w = attention::segment_softmax(logits, batch.graph);
    for (std::size_t k = 0; k < batch.graph.size(); ++k) {
      auto& a = batch.graph.blocks[k];
      a.row(0) = w.middleRows(batch.graph.offsets[k], a.rows()).transpose();
    }
    if (cache) cache->sa_weights = w;
  }
  const Matrix h =
      nn::forward(net.gcn, e, nn::Mode::Eval, nullptr, cache ? &cache->gcn : nullptr, &batch.graph);
  const Index bsz = static_cast<Index>(batch.graph.size());
  Matrix vin(bsz, kEmbedDim + kRobotDim);
  for (Index k = 0; k < bsz; ++k) {
    vin.row(k).leftCols(kEmbedDim) = h.row(batch.graph.offsets[static_cast<std::size_t>(k)]);
    vin.row(k).rightCols(kRobotDim) = batch.robot_state.row(k);
  }
  return nn::forward(net.value, vin, nn::Mode::Eval, nullptr, cache ? &cache->value : nullptr);
}

// Accumulates parameter gradients for dL/dV.
inline void policy_backward(PolicyNet& net, const PolicyBatch& batch, const AttentionMode& mode,
                            const PolicyCache& cache, const Matrix& d_value) {
  const Matrix dvin = nn::backward(net.value, cache.value, d_value);
  Matrix dh = Matrix::Zero(batch.graph.total, kEmbedDim);
  for (std::size_t k = 0; k < batch.graph.size(); ++k)
    dh.row(batch.graph.offsets[k]) = dvin.row(static_cast<Index>(k)).leftCols(kEmbedDim);
  const bool sa = mode.kind == AttentionKind::SelfAttention;
  std::vector<Matrix> da;
  Matrix de = nn::backward(net.gcn, cache.gcn, dh, sa ? &da : nullptr);
  if (sa) {
    Matrix dw(batch.graph.total, 1);
    for (std::size_t k = 0; k < batch.graph.size(); ++k)
      dw.middleRows(batch.graph.offsets[k], da[k].rows()) = da[k].row(0).transpose();
    const Matrix ds = attention::segment_softmax_backward(cache.sa_weights, dw, batch.graph);
    de += nn::backward(net.score, cache.score, ds);
  }
  nn::backward(net.embed, cache.embed, de);
}

inline std::vector<double> values(const PolicyNet& net, const std::vector<const sim::SceneState*>& scenes,
                                  const AttentionMode& mode, const AdjacencyOptions& opt = {}) {
  if (scenes.empty()) return {};
  auto batch = make_batch(scenes, mode, opt);
  const Matrix v = policy_forward(net, batch, mode);
  return {v.data(), v.data() + v.size()};
}

inline double value(const PolicyNet& net, const sim::SceneState& scene, const AttentionMode& mode,
                    const AdjacencyOptions& opt = {}) {
  return values(net, {&scene}, mode, opt).front();
}

// The adjacency the network actually uses for a scene, red row included.
inline Matrix build_adjacency(const sim::SceneState& scene, const AttentionMode& mode,
                              const AdjacencyOptions& opt = {}, const PolicyNet* net = nullptr) {
  if (mode.kind == AttentionKind::SelfAttention) {
    if (!net) throw InvalidArgument("self-attention adjacency needs the policy network");
    const Matrix e = nn::forward(net->embed, featurize(scene, true), nn::Mode::Eval);
    return assemble_adjacency(self_attention_scores(net->score, e), opt);
  }
  return assemble_adjacency(red_row(scene, mode, true), opt);
}

// ---- actions ---------------------------------------------------------------

// Velocities in the robot frame (+x toward the goal); index 0 is the stop action.
struct ActionSpace {
  std::vector<Vec2> local;

  static ActionSpace standard(double v_pref = 1.0, int speeds = 5, int headings = 16) {
    ActionSpace a;
    a.local.push_back({0.0, 0.0});
    for (int k = 1; k <= speeds; ++k) {
      const double v = v_pref * (std::exp(static_cast<double>(k) / speeds) - 1.0) / (std::exp(1.0) - 1.0);
      for (int j = 0; j < headings; ++j) {
        const double th = 2.0 * M_PI * j / headings;
        a.local.push_back({v * std::cos(th), v * std::sin(th)});
      }
    }
    return a;
  }
  std::size_t size() const { return local.size(); }
  sim::Action to_world(std::size_t i, const sim::Frame& frame) const {
    const Vec2 w = frame.vector_to_world(local.at(i));
    return {w.x, w.y};
  }
};

// Robot moved by the action, humans extrapolated at constant velocity.
inline sim::SceneState propagate(const sim::SceneState& scene, const sim::Action& action, double dt) {
  sim::SceneState next = scene;
  next.time = scene.time + dt;
  next.robot = sim::step_robot(scene.robot, action, dt);
  for (auto& h : next.humans) h.position = h.position + h.velocity * dt;
  return next;
}

struct SelectionConfig {
  double gamma = 0.9;
  double dt = sim::kDefaultDt;
  std::size_t sample_k = 0;  // 0 evaluates every action
  AdjacencyOptions adjacency;
  RewardParams reward;
};

struct Selection {
  std::size_t index = 0;
  sim::Action action;
  double score = 0.0;
  bool explored = false;
};

// One-step returns r + gamma^(dt v_pref) V(s') of the listed actions. Terminal
// lookahead states score their reward alone.
inline std::vector<double> action_returns(const PolicyNet& net, const sim::SceneState& scene,
                                          const AttentionMode& mode, const ActionSpace& space,
                                          const std::vector<std::size_t>& candidates,
                                          const SelectionConfig& cfg = {}) {
  const auto frame = sim::Frame::from(scene.robot, true);
  const double discount = std::pow(cfg.gamma, cfg.dt * scene.robot.v_pref);
  std::vector<double> out(candidates.size());
  std::vector<sim::SceneState> nexts;
  std::vector<std::size_t> slot;
  nexts.reserve(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto next = propagate(scene, space.to_world(candidates[c], frame), cfg.dt);
    const auto r = reward(scene, next, cfg.dt, kInf, cfg.reward);
    out[c] = r.reward;
    if (!r.terminal) {
      nexts.push_back(std::move(next));
      slot.push_back(c);
    }
  }
  std::vector<const sim::SceneState*> ptrs;
  ptrs.reserve(nexts.size());
  for (const auto& s : nexts) ptrs.push_back(&s);
  const auto v = values(net, ptrs, mode, cfg.adjacency);
  for (std::size_t i = 0; i < slot.size(); ++i) out[slot[i]] += discount * v[i];
  return out;
}

inline Selection select_action(const PolicyNet& net, const sim::SceneState& scene, const AttentionMode& mode,
                               const ActionSpace& space, double epsilon, Rng& rng,
                               const SelectionConfig& cfg = {}) {
  if (space.size() == 0) throw InvalidArgument("select_action: empty action space");
  const auto frame = sim::Frame::from(scene.robot, true);
  Selection sel;
  if (epsilon > 0.0 && uniform01(rng) < epsilon) {
    sel.index = uniform_index(rng, space.size());
    sel.action = space.to_world(sel.index, frame);
    sel.explored = true;
    return sel;
  }
  std::vector<std::size_t> cand(space.size());
  std::iota(cand.begin(), cand.end(), 0);
  if (cfg.sample_k > 0 && cfg.sample_k < cand.size()) {
    shuffle(cand.begin(), cand.end(), rng);
    cand.resize(cfg.sample_k);
    std::sort(cand.begin(), cand.end());
  }
  const auto ret = action_returns(net, scene, mode, space, cand, cfg);
  std::size_t best = 0;
  for (std::size_t c = 1; c < cand.size(); ++c)
    if (ret[c] > ret[best]) best = c;
  sel.index = cand[best];
  sel.action = space.to_world(sel.index, frame);
  sel.score = ret[best];
  return sel;
}

// ---- replay buffer ---------------------------------------------------------

struct Transition {
  sim::SceneState scene;
  double value_target = 0.0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = kBufferCapacity) : capacity_(capacity) {
    if (capacity == 0) throw InvalidArgument("replay buffer capacity must be positive");
  }

  void push(Transition t) {
    if (!std::isfinite(t.value_target)) throw InvalidArgument("replay buffer: non-finite target");
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
  }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  // Uniform draws with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw InvalidArgument("replay buffer: sampling an empty buffer");
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &items_[uniform_index(rng, items_.size())];
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

// Binary buffer file: "GZNVBUFR", u32 version, u64 capacity, u64 count, then per
// transition f64 time, f64 target, robot, u32 human count, humans; each agent is
// 9 f64 (x, y, vx, vy, r, gx, gy, v_pref, heading).
inline constexpr char kBufferMagic[8] = {'G', 'Z', 'N', 'V', 'B', 'U', 'F', 'R'};

namespace detail {
inline void put_agent(std::ostream& os, const sim::AgentState& a) {
  for (double v : {a.position.x, a.position.y, a.velocity.x, a.velocity.y, a.radius, a.goal.x, a.goal.y,
                   a.v_pref, a.heading})
    nn::detail::put_f64(os, v);
}
inline sim::AgentState get_agent(std::istream& is) {
  sim::AgentState a;
  a.position.x = nn::detail::get_f64(is);
  a.position.y = nn::detail::get_f64(is);
  a.velocity.x = nn::detail::get_f64(is);
  a.velocity.y = nn::detail::get_f64(is);
  a.radius = nn::detail::get_f64(is);
  a.goal.x = nn::detail::get_f64(is);
  a.goal.y = nn::detail::get_f64(is);
  a.v_pref = nn::detail::get_f64(is);
  a.heading = nn::detail::get_f64(is);
  return a;
}
}  // namespace detail

inline void write_buffer(std::ostream& os, const ReplayBuffer& buf) {
  os.write(kBufferMagic, 8);
  nn::detail::put_u(os, 1, 4);
  nn::detail::put_u(os, buf.capacity(), 8);
  nn::detail::put_u(os, buf.size(), 8);
  for (const auto& t : buf) {
    nn::detail::put_f64(os, t.scene.time);
    nn::detail::put_f64(os, t.value_target);
    detail::put_agent(os, t.scene.robot);
    nn::detail::put_u(os, t.scene.humans.size(), 4);
    for (const auto& h : t.scene.humans) detail::put_agent(os, h);
  }
}

inline ReplayBuffer read_buffer(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kBufferMagic))
    throw nn::CheckpointError("not a replay buffer file");
  if (nn::detail::get_u(is, 4) != 1) throw nn::CheckpointError("unsupported replay buffer version");
  ReplayBuffer buf(nn::detail::get_u(is, 8));
  const auto count = nn::detail::get_u(is, 8);
  for (std::uint64_t i = 0; i < count; ++i) {
    Transition t;
    t.scene.time = nn::detail::get_f64(is);
    t.value_target = nn::detail::get_f64(is);
    t.scene.robot = detail::get_agent(is);
    const auto n = nn::detail::get_u(is, 4);
    for (std::uint64_t k = 0; k < n; ++k) t.scene.humans.push_back(detail::get_agent(is));
    buf.push(std::move(t));
  }
  return buf;
}

// ---- demonstrations --------------------------------------------------------

inline double demonstration_target(double t, double t_terminal, double terminal_reward, double gamma,
                                   double v_pref) {
  return std::pow(gamma, (t_terminal - t) * v_pref) * terminal_reward;
}

struct EpisodeSummary {
  std::size_t episode = 0;
  StepStatus status = StepStatus::Running;
  double nav_time = 0.0;
  double ret = 0.0;  // discounted return from the first state
  std::size_t steps = 0;
};

struct Demonstrations {
  std::vector<Transition> transitions;
  std::vector<EpisodeSummary> episodes;
};

// ORCA velocity for the robot, treating the humans as reciprocal neighbors.
inline sim::Action orca_robot_action(const sim::SceneState& scene, const orca::OrcaParams& params) {
  const Vec2 v = orca::orca_velocity(scene.robot, scene.humans, params);
  return {v.x, v.y};
}

// Every visited non-terminal state of every episode, successes and failures alike.
inline Demonstrations collect_demonstrations(env::CrowdEnv& env, const orca::OrcaParams& params,
                                             std::size_t n_episodes, std::uint64_t seed, double gamma = 0.9) {
  if (n_episodes == 0) throw InvalidArgument("collect_demonstrations: need at least one episode");
  Demonstrations out;
  for (std::size_t ep = 0; ep < n_episodes; ++ep) {
    env.reset(derive_seed(seed, ep), ep);
    std::vector<sim::SceneState> states;
    double terminal_reward = 0.0;
    while (!env.done()) {
      states.push_back(env.scene());
      const auto r = env.step(orca_robot_action(env.scene(), params));
      if (r.done) terminal_reward = r.reward;
    }
    const double t_terminal = env.scene().time;
    const double v_pref = env.scene().robot.v_pref;
    const double ret =
        states.empty() ? 0.0 : demonstration_target(states.front().time, t_terminal, terminal_reward, gamma, v_pref);
    const std::size_t steps = states.size();
    for (auto& s : states) {
      const double target = demonstration_target(s.time, t_terminal, terminal_reward, gamma, v_pref);
      out.transitions.push_back({std::move(s), target});
    }
    out.episodes.push_back({ep, env.status(), t_terminal, ret, steps});
  }
  return out;
}

// ---- training --------------------------------------------------------------

// One gradient step on MSE(V, target) over a minibatch; returns the loss before the step.
inline double train_step(PolicyNet& net, const std::vector<const Transition*>& batch, const AttentionMode& mode,
                         double lr, const nn::OptimizerConfig& opt, const AdjacencyOptions& adj = {}) {
  std::vector<const sim::SceneState*> scenes;
  Matrix target(static_cast<Index>(batch.size()), 1);
  scenes.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    scenes.push_back(&batch[i]->scene);
    target(static_cast<Index>(i), 0) = batch[i]->value_target;
  }
  auto pb = make_batch(scenes, mode, adj);
  PolicyCache cache;
  const Matrix v = policy_forward(net, pb, mode, &cache);
  const auto l = nn::loss(nn::LossKind::MSE, v, target);
  policy_backward(net, pb, mode, cache, l.grad);
  nn::optimizer_step(net.embed.params, lr, opt);
  nn::optimizer_step(net.gcn.params, lr, opt);
  nn::optimizer_step(net.value.params, lr, opt);
  if (mode.kind == AttentionKind::SelfAttention) nn::optimizer_step(net.score.params, lr, opt);
  return l.value;
}

inline double mean_loss(const PolicyNet& net, const std::vector<Transition>& data, const AttentionMode& mode,
                        const AdjacencyOptions& adj = {}, std::size_t chunk = 500) {
  double total = 0.0;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t e = std::min(data.size(), b + chunk);
    std::vector<const sim::SceneState*> scenes;
    for (std::size_t i = b; i < e; ++i) scenes.push_back(&data[i].scene);
    const auto v = values(net, scenes, mode, adj);
    for (std::size_t i = b; i < e; ++i) total += (v[i - b] - data[i].value_target) * (v[i - b] - data[i].value_target);
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

struct ImitationResult {
  std::vector<double> loss_curve;  // mean minibatch MSE per epoch
};

// Supervised fit of V to the demonstration targets.
inline ImitationResult imitation_learning(PolicyNet& net, const std::vector<Transition>& demos,
                                          const AttentionMode& mode, const nn::TrainConfig& config,
                                          const AdjacencyOptions& adj = {}) {
  if (demos.empty()) throw InvalidArgument("imitation_learning: no demonstrations");
  ImitationResult res;
  const std::size_t batch = std::max<std::size_t>(config.batch_size, 1);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, epoch));
    std::vector<std::size_t> order(demos.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      std::vector<const Transition*> mb;
      for (std::size_t i = b; i < std::min(order.size(), b + batch); ++i) mb.push_back(&demos[order[i]]);
      total += train_step(net, mb, mode, config.learning_rate, config.optimizer, adj);
      ++count;
    }
    res.loss_curve.push_back(total / static_cast<double>(count));
  }
  return res;
}

struct RLConfig {
  double gamma = 0.9;
  std::size_t il_episodes = 3000;
  std::size_t il_epochs = 50;
  double il_learning_rate = 1e-3;
  std::size_t rl_episodes = 20000;
  double epsilon_start = 0.5;
  double epsilon_end = 0.1;
  std::size_t epsilon_decay = 4000;
  std::size_t target_update = 50;
  std::size_t buffer_capacity = kBufferCapacity;
  std::size_t batch_size = 100;
  std::size_t train_batches = 100;  // gradient steps after each episode
  double learning_rate = 1e-4;
  nn::OptimizerConfig optimizer;
  std::size_t sample_k = 0;
  AdjacencyOptions adjacency;
  std::uint64_t seed = 0;

  // Episode counts and the exploration schedule shrunk by `factor`.
  static RLConfig scaled(double factor) {
    RLConfig c;
    auto s = [&](std::size_t n) { return static_cast<std::size_t>(std::llround(static_cast<double>(n) * factor)); };
    c.il_episodes = s(c.il_episodes);
    c.rl_episodes = s(c.rl_episodes);
    c.epsilon_decay = std::max<std::size_t>(1, s(c.epsilon_decay));
    return c;
  }
  // Ten times fewer episodes; a larger step size and fewer updates per episode
  // make up for the shorter schedule.
  static RLConfig desk_scale() {
    RLConfig c = scaled(0.1);
    c.learning_rate = 1e-3;
    c.train_batches = 50;
    return c;
  }

  double epsilon(std::size_t episode) const {
    if (episode >= epsilon_decay) return epsilon_end;
    return epsilon_start + (epsilon_end - epsilon_start) * static_cast<double>(episode) /
                               static_cast<double>(epsilon_decay);
  }
  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in (0, 1)");
    if (target_update == 0 || batch_size == 0 || buffer_capacity == 0)
      throw InvalidArgument("target_update, batch_size and buffer_capacity must be positive");
  }
};

struct EpisodeLog {
  std::size_t episode = 0;
  std::string outcome;
  double nav_time = 0.0;
  double ret = 0.0;
  double epsilon = 0.0;
  std::size_t buffer_size = 0;
  double loss = 0.0;
};

inline io::json to_json(const EpisodeLog& l) {
  return {{"episode", l.episode}, {"outcome", l.outcome}, {"nav_time", l.nav_time}, {"return", l.ret},
          {"epsilon", l.epsilon}, {"buffer_size", l.buffer_size}, {"loss", l.loss}};
}

inline EpisodeLog episode_log_from_json(const io::json& j) {
  EpisodeLog l;
  l.episode = j.at("episode").get<std::size_t>();
  l.outcome = j.at("outcome").get<std::string>();
  l.nav_time = j.at("nav_time").get<double>();
  l.ret = j.at("return").get<double>();
  l.epsilon = j.at("epsilon").get<double>();
  l.buffer_size = j.at("buffer_size").get<std::size_t>();
  l.loss = j.value("loss", 0.0);
  return l;
}

inline std::string write_log(const std::vector<EpisodeLog>& log) {
  std::string out;
  for (const auto& l : log) out += to_json(l).dump() + '\n';
  return out;
}

struct RLState {
  PolicyNet net;
  PolicyNet target;
  ReplayBuffer buffer;
  std::size_t episodes_done = 0;
  std::vector<EpisodeLog> log;
};

// Seeds of the RL stage's independent streams.
inline std::uint64_t rl_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t episode) {
  return derive_seed(derive_seed(seed, 0x524c0000ULL + stream), episode);
}

// Fresh RL state: the buffer is pre-filled with the demonstrations.
inline RLState start_rl(const PolicyNet& net, const std::vector<Transition>& demos, const RLConfig& cfg) {
  RLState s{net, net, ReplayBuffer(cfg.buffer_capacity), 0, {}};
  for (const auto& t : demos) s.buffer.push(t);
  return s;
}

using EpisodeCallback = std::function<void(const EpisodeLog&, const RLState&)>;

// Runs episodes [state.episodes_done, min(rl_episodes, stop_after)). Every random
// stream is derived from (seed, episode), so a saved state resumes bit-identically.
inline RLState rl_training(RLState state, env::CrowdEnv& env, const AttentionMode& mode, const RLConfig& cfg,
                           std::size_t stop_after = std::numeric_limits<std::size_t>::max(),
                           const EpisodeCallback& on_episode = {}) {
  cfg.validate();
  SelectionConfig sel;
  sel.gamma = cfg.gamma;
  sel.dt = env.dt();
  sel.sample_k = cfg.sample_k;
  sel.adjacency = cfg.adjacency;
  const std::size_t end = std::min(cfg.rl_episodes, stop_after);
  for (std::size_t ep = state.episodes_done; ep < end; ++ep) {
    if (ep % cfg.target_update == 0) state.target = state.net;
    const double eps = cfg.epsilon(ep);
    Rng act_rng(rl_stream(cfg.seed, 1, ep));
    env.reset(rl_stream(cfg.seed, 0, ep), ep);
    const auto space = ActionSpace::standard(env.scene().robot.v_pref);
    const double discount = std::pow(cfg.gamma, env.dt() * env.scene().robot.v_pref);
    double ret = 0.0;
    double scale = 1.0;
    while (!env.done()) {
      const sim::SceneState s = env.scene();
      const auto choice = select_action(state.net, s, mode, space, eps, act_rng, sel);
      const auto r = env.step(choice.action);
      ret += scale * r.reward;
      scale *= discount;
      double target = r.reward;
      if (!r.done) target += discount * value(state.target, r.next, mode, cfg.adjacency);
      state.buffer.push({s, target});
    }
    Rng sample_rng(rl_stream(cfg.seed, 2, ep));
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.train_batches; ++b)
      loss += train_step(state.net, state.buffer.sample(cfg.batch_size, sample_rng), mode, cfg.learning_rate,
                         cfg.optimizer, cfg.adjacency);
    EpisodeLog log{ep,
                   std::string(sim::to_string(to_outcome(env.status()))),
                   env.scene().time,
                   ret,
                   eps,
                   state.buffer.size(),
                   cfg.train_batches ? loss / static_cast<double>(cfg.train_batches) : 0.0};
    state.log.push_back(log);
    state.episodes_done = ep + 1;
    if (on_episode) on_episode(log, state);
  }
  return state;
}

inline double trailing_success(const std::vector<EpisodeLog>& log, std::size_t window = 100) {
  if (log.empty()) return 0.0;
  const std::size_t n = std::min(window, log.size());
  std::size_t ok = 0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) ok += log[i].outcome == "Success";
  return static_cast<double>(ok) / static_cast<double>(n);
}

// ---- persistence -----------------------------------------------------------

inline std::vector<nn::NamedNetwork> named_networks(const PolicyNet& net, const std::string& prefix = "") {
  std::vector<nn::NamedNetwork> out;
  net.for_each_network([&](std::string_view name, const nn::Network& n) { out.push_back({prefix + std::string(name), n}); });
  return out;
}

inline PolicyNet policy_from_checkpoint(const nn::LoadedCheckpoint& ck, const std::string& prefix = "") {
  PolicyNet p;
  p.for_each_network([&](std::string_view name, nn::Network& n) { n = ck.get(prefix + std::string(name)); });
  const auto ref = PolicyNet::create(0);
  bool same = true;
  ref.for_each_network([&](std::string_view name, const nn::Network& n) {
    p.for_each_network([&](std::string_view other, const nn::Network& m) {
      if (name == other && n.specs != m.specs) same = false;
    });
  });
  if (!same) throw nn::IncompatibleCheckpoint("checkpoint does not hold the policy architecture");
  return p;
}

struct PolicyMeta {
  AttentionKind mode = AttentionKind::Uniform;
  std::string attention_hash;  // Gaze only
  double sigma_sq = attention::kDistanceSigmaSq;
  AdjacencyOptions adjacency;
  std::string stage;  // "il" or "rl"
  std::size_t episodes = 0;
};

inline io::json to_json(const PolicyMeta& m) {
  return {{"kind", "policy"},        {"mode", std::string(to_string(m.mode))},
          {"attention_hash", m.attention_hash}, {"sigma_sq", m.sigma_sq},
          {"green", m.adjacency.green}, {"blue_diagonal", m.adjacency.blue_diagonal},
          {"stage", m.stage},         {"episodes", m.episodes}};
}

inline PolicyMeta policy_meta_from_json(const io::json& j) {
  if (j.value("kind", std::string()) != "policy") throw nn::IncompatibleCheckpoint("not a policy checkpoint");
  PolicyMeta m;
  const auto k = attention_kind_from_string(j.at("mode").get<std::string>());
  if (!k) throw nn::IncompatibleCheckpoint("unknown attention mode in policy checkpoint");
  m.mode = *k;
  m.attention_hash = j.value("attention_hash", std::string());
  m.sigma_sq = j.value("sigma_sq", attention::kDistanceSigmaSq);
  m.adjacency.green = j.value("green", 0.5);
  m.adjacency.blue_diagonal = j.value("blue_diagonal", 0.5);
  m.stage = j.value("stage", std::string());
  m.episodes = j.value("episodes", static_cast<std::size_t>(0));
  return m;
}

inline std::string save_policy(const std::string& path, const PolicyNet& net, const PolicyMeta& meta) {
  return nn::save_checkpoint(path, named_networks(net), false, to_json(meta));
}

struct LoadedPolicy {
  PolicyNet net;
  PolicyMeta meta;
  std::string hash;
};

inline LoadedPolicy load_policy(const std::string& path) {
  const auto ck = nn::load_checkpoint(path);
  if (!ck.metadata.contains("meta")) throw nn::IncompatibleCheckpoint(path + ": missing metadata sidecar");
  return {policy_from_checkpoint(ck), policy_meta_from_json(ck.metadata["meta"]), ck.hash};
}

// The attention mode a loaded policy was trained with. Gaze mode needs the
// attention checkpoint whose hash the policy recorded.
inline AttentionMode resolve_mode(const PolicyMeta& meta, const std::string& attention_path = "") {
  switch (meta.mode) {
    case AttentionKind::Uniform:
      return AttentionMode::uniform();
    case AttentionKind::Distance:
      return AttentionMode::distance(meta.sigma_sq);
    case AttentionKind::SelfAttention:
      return AttentionMode::self_attention();
    case AttentionKind::Gaze: {
      if (attention_path.empty()) throw InvalidArgument("gaze-mode policy needs an attention checkpoint");
      std::string hash;
      auto t = attention::load_attention(attention_path, &hash);
      if (hash != meta.attention_hash)
        throw nn::IncompatibleCheckpoint("attention checkpoint hash " + hash + " does not match policy's " +
                                         meta.attention_hash);
      return AttentionMode::gaze(std::make_shared<const attention::AttentionNet>(std::move(t.net)));
    }
  }
  return {};
}

// Training state: `<path>` holds both networks with optimizer slots, `<path>.buffer`
// the replay buffer; the sidecar carries the episode counter and the log.
inline void save_rl_state(const std::string& path, const RLState& s, const io::json& extra = io::json::object()) {
  auto nets = named_networks(s.net);
  for (auto& n : named_networks(s.target, "target.")) nets.push_back(std::move(n));
  io::json meta = extra;
  meta["kind"] = "rl_state";
  meta["episodes_done"] = s.episodes_done;
  meta["log"] = io::json::array();
  for (const auto& l : s.log) meta["log"].push_back(to_json(l));
  nn::save_checkpoint(path, nets, true, meta);
  std::ofstream out(path + ".buffer", std::ios::binary);
  if (!out) throw Error("cannot write " + path + ".buffer");
  write_buffer(out, s.buffer);
}

inline RLState load_rl_state(const std::string& path, io::json* extra = nullptr) {
  const auto ck = nn::load_checkpoint(path);
  const auto& meta = ck.metadata.at("meta");
  if (meta.value("kind", std::string()) != "rl_state") throw nn::IncompatibleCheckpoint(path + ": not a training state");
  RLState s{policy_from_checkpoint(ck), policy_from_checkpoint(ck, "target."), ReplayBuffer(), 0, {}};
  s.episodes_done = meta.at("episodes_done").get<std::size_t>();
  for (const auto& l : meta.at("log")) s.log.push_back(episode_log_from_json(l));
  std::ifstream in(path + ".buffer", std::ios::binary);
  if (!in) throw Error("cannot open " + path + ".buffer");
  s.buffer = read_buffer(in);
  if (extra) *extra = meta;
  return s;
}

}  // namespace gazenav::policy
