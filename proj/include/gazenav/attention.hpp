#pragma once

// Attention over scene nodes {robot, humans..., goal}: labels from gaze points,
// the two-layer star-graph attention network, baselines and similarity metrics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gazenav/checkpoint.hpp"
#include "gazenav/common.hpp"
#include "gazenav/io.hpp"
#include "gazenav/nn.hpp"
#include "gazenav/sim.hpp"

namespace gazenav::attention {

using nn::Matrix;

inline constexpr double kDefaultSigma = 0.7;
inline constexpr double kDefaultWindow = 0.1;
inline constexpr double kDistanceSigmaSq = 2.0;
inline constexpr double kKlEpsilon = 1e-10;
inline constexpr int kHidden = 128;
inline constexpr double kDropout = 0.5;

class NoGazeInWindow : public Error {
 public:
  NoGazeInWindow() : Error("no gaze sample inside the temporal window") {}
};

class ZeroCrowd : public Error {
 public:
  ZeroCrowd() : Error("distance weights need at least one human") {}
};

class LengthMismatch : public Error {
 public:
  LengthMismatch() : Error("attention distributions differ in length") {}
};

struct GazeSample {
  double t = 0.0;
  Vec2 point;
};

// Normalized weights over [robot, humans..., goal].
struct AttentionLabel {
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i]; }
  bool valid(double tol = 1e-9) const {
    double s = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) return false;
      s += w;
    }
    return !weights.empty() && std::fabs(s - 1.0) <= tol;
  }
};

inline Matrix star_adjacency(int n_nodes) {
  if (n_nodes < 2) throw InvalidArgument("star_adjacency: need at least two nodes");
  Matrix a = Matrix::Zero(n_nodes, n_nodes);
  a.row(0).setConstant(1.0 / n_nodes);
  for (int i = 1; i < n_nodes; ++i) {
    a(i, 0) = 0.5;
    a(i, i) = 0.5;
  }
  return a;
}

// World positions of the nodes, ordered [robot, humans..., goal].
inline std::vector<Vec2> node_positions(const sim::SceneState& scene) {
  std::vector<Vec2> p;
  p.reserve(scene.humans.size() + 2);
  p.push_back(scene.robot.position);
  for (const auto& h : scene.humans) p.push_back(h.position);
  p.push_back(scene.robot.goal);
  return p;
}

// s_att rows [x, y, vx, vy] in the robot frame; the goal is static.
inline Matrix attention_input(const sim::SceneState& scene, bool lenient = false) {
  const auto local = sim::to_robot_frame(scene, lenient);
  const auto n = static_cast<nn::Index>(scene.humans.size() + 2);
  Matrix x = Matrix::Zero(n, 4);
  x(0, 2) = local.robot.velocity.x;
  x(0, 3) = local.robot.velocity.y;
  for (std::size_t i = 0; i < local.humans.size(); ++i) {
    const auto& h = local.humans[i];
    const auto r = static_cast<nn::Index>(i + 1);
    x.row(r) << h.position.x, h.position.y, h.velocity.x, h.velocity.y;
  }
  x(n - 1, 0) = local.robot.goal.x;
  x(n - 1, 1) = local.robot.goal.y;
  return x;
}

// Gaussian-mixture density over in-window gaze points, evaluated at each node and normalized.
inline AttentionLabel gaze_to_label(const std::vector<GazeSample>& gaze, double t,
                                    const std::vector<Vec2>& nodes, double sigma = kDefaultSigma,
                                    double window = kDefaultWindow) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaze_to_label: sigma must be positive");
  std::vector<Vec2> points;
  for (const auto& g : gaze)
    if (g.t >= t - window && g.t <= t + window) points.push_back(g.point);
  if (points.empty()) throw NoGazeInWindow();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  AttentionLabel label;
  label.weights.resize(nodes.size(), 0.0);
  // Work in log space so far-away nodes underflow gracefully and the normalization stays exact.
  std::vector<double> log_density(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double m = -kInf;
    std::vector<double> e(points.size());
    for (std::size_t k = 0; k < points.size(); ++k) {
      e[k] = -(nodes[i] - points[k]).squared_norm() * inv;
      m = std::max(m, e[k]);
    }
    double s = 0.0;
    for (double v : e) s += std::exp(v - m);
    log_density[i] = m + std::log(s);
  }
  const double top = *std::max_element(log_density.begin(), log_density.end());
  double total = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    label.weights[i] = std::exp(log_density[i] - top);
    total += label.weights[i];
  }
  for (double& w : label.weights) w /= total;
  return label;
}

// ---- similarity metrics ----------------------------------------------------

inline double kl_divergence(const AttentionLabel& gt, const AttentionLabel& pred) {
  if (gt.size() != pred.size()) throw LengthMismatch();
  double kl = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    kl += gt[i] * std::log((gt[i] + kKlEpsilon) / (pred[i] + kKlEpsilon));
  return kl;
}

inline double correlation_coefficient(const AttentionLabel& gt, const AttentionLabel& pred) {
  if (gt.size() != pred.size()) throw LengthMismatch();
  const std::size_t n = gt.size();
  if (n < 2) return 0.0;
  double mg = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mg += gt[i];
    mp += pred[i];
  }
  mg /= static_cast<double>(n);
  mp /= static_cast<double>(n);
  double cov = 0.0, vg = 0.0, vp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (gt[i] - mg) * (pred[i] - mp);
    vg += (gt[i] - mg) * (gt[i] - mg);
    vp += (pred[i] - mp) * (pred[i] - mp);
  }
  if (vg <= 1e-300 || vp <= 1e-300) return 0.0;
  return std::clamp(cov / std::sqrt(vg * vp), -1.0, 1.0);
}

// Human entries of a node distribution, renormalized (uniform if they carry no mass).
inline AttentionLabel humans_only(const AttentionLabel& all_nodes) {
  AttentionLabel out;
  if (all_nodes.size() < 3) return out;
  out.weights.assign(all_nodes.weights.begin() + 1, all_nodes.weights.end() - 1);
  const double s = std::accumulate(out.weights.begin(), out.weights.end(), 0.0);
  for (double& w : out.weights) w = s > 0.0 ? w / s : 1.0 / static_cast<double>(out.weights.size());
  return out;
}

// ---- baselines -------------------------------------------------------------

namespace detail {
inline std::vector<double> softmax_neg_sq(const std::vector<double>& d, double sigma_sq) {
  std::vector<double> w(d.size());
  double m = -kInf;
  for (std::size_t i = 0; i < d.size(); ++i) m = std::max(m, -d[i] * d[i] / sigma_sq);
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    w[i] = std::exp(-d[i] * d[i] / sigma_sq - m);
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}
}  // namespace detail

// Weights over humans decaying with squared distance from the robot.
inline std::vector<double> distance_weights(const sim::SceneState& scene, double sigma_sq = kDistanceSigmaSq) {
  if (scene.humans.empty()) throw ZeroCrowd();
  std::vector<double> d;
  for (const auto& h : scene.humans) d.push_back((h.position - scene.robot.position).norm());
  return detail::softmax_neg_sq(d, sigma_sq);
}

// Same decay applied to every node; the robot sits at distance zero.
inline AttentionLabel distance_weights_all_nodes(const sim::SceneState& scene,
                                                 double sigma_sq = kDistanceSigmaSq) {
  std::vector<double> d;
  for (const auto& p : node_positions(scene)) d.push_back((p - scene.robot.position).norm());
  return {detail::softmax_neg_sq(d, sigma_sq)};
}

inline AttentionLabel uniform_label(std::size_t n) {
  return {std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

// ---- synthetic gaze --------------------------------------------------------

struct OracleParams {
  int k = 2;            // humans looked at per instant
  double p_goal = 0.3;  // chance of an extra glance at the goal
  double noise = 0.0;   // gaussian jitter (meters) on each gaze point
};

// Time of closest approach to the robot under constant velocity; +inf when receding or static.
inline double time_to_closest_approach(const sim::AgentState& robot, const sim::AgentState& human) {
  const Vec2 p = human.position - robot.position;
  const Vec2 v = human.velocity - robot.velocity;
  const double vv = v.squared_norm();
  if (vv < 1e-12) return kInf;
  const double t = -dot(p, v) / vv;
  return t > 0.0 ? t : kInf;
}

inline std::vector<GazeSample> oracle_gaze(const sim::SceneState& scene, const OracleParams& params, Rng& rng) {
  std::vector<std::pair<double, std::size_t>> ttca;
  for (std::size_t i = 0; i < scene.humans.size(); ++i) {
    const double t = time_to_closest_approach(scene.robot, scene.humans[i]);
    if (std::isfinite(t)) ttca.emplace_back(t, i);
  }
  std::sort(ttca.begin(), ttca.end());
  std::vector<GazeSample> gaze;
  auto jitter = [&](Vec2 p) {
    if (params.noise > 0.0) {
      // Box-Muller on portable uniforms.
      const double u1 = std::max(uniform01(rng), 1e-300);
      const double u2 = uniform01(rng);
      const double r = params.noise * std::sqrt(-2.0 * std::log(u1));
      p += Vec2{r * std::cos(2.0 * M_PI * u2), r * std::sin(2.0 * M_PI * u2)};
    }
    return p;
  };
  for (std::size_t j = 0; j < ttca.size() && j < static_cast<std::size_t>(std::max(params.k, 0)); ++j)
    gaze.push_back({scene.time, jitter(scene.humans[ttca[j].second].position)});
  const bool look_at_goal = uniform01(rng) < params.p_goal;
  if (look_at_goal || gaze.empty()) gaze.push_back({scene.time, jitter(scene.robot.goal)});
  return gaze;
}

// ---- network ---------------------------------------------------------------

struct AttentionNet {
  nn::Network net;

  static std::vector<nn::LayerSpec> architecture(int hidden = kHidden, double dropout = kDropout) {
    using nn::LayerSpec;
    return {LayerSpec::graph_conv(4, hidden), LayerSpec::relu(), LayerSpec::dropout(dropout),
            LayerSpec::graph_conv(hidden, 1), LayerSpec::dropout(dropout)};
  }
  static AttentionNet create(std::uint64_t seed, int hidden = kHidden, double dropout = kDropout) {
    Rng rng(seed);
    return {nn::Network(architecture(hidden, dropout), rng)};
  }
};

// Softmax over the rows of each graph block of a column of logits.
inline Matrix segment_softmax(const Matrix& logits, const nn::GraphBatch& graph) {
  Matrix out(logits.rows(), 1);
  for (std::size_t k = 0; k < graph.size(); ++k) {
    const auto n = graph.blocks[k].rows();
    out.middleRows(graph.offsets[k], n) =
        nn::softmax_rows(logits.middleRows(graph.offsets[k], n).transpose()).transpose();
  }
  return out;
}

inline Matrix segment_softmax_backward(const Matrix& y, const Matrix& g, const nn::GraphBatch& graph) {
  Matrix out(y.rows(), 1);
  for (std::size_t k = 0; k < graph.size(); ++k) {
    const auto n = graph.blocks[k].rows();
    out.middleRows(graph.offsets[k], n) =
        nn::softmax_rows_backward(y.middleRows(graph.offsets[k], n).transpose(),
                                  g.middleRows(graph.offsets[k], n).transpose())
            .transpose();
  }
  return out;
}

inline AttentionLabel predict_attention(const AttentionNet& net, const Matrix& input) {
  const auto graph = nn::GraphBatch::single(star_adjacency(static_cast<int>(input.rows())));
  const Matrix logits = nn::forward(net.net, input, nn::Mode::Eval, nullptr, nullptr, &graph);
  const Matrix w = segment_softmax(logits, graph);
  return {std::vector<double>(w.data(), w.data() + w.size())};
}

inline AttentionLabel predict_attention(const AttentionNet& net, const sim::SceneState& scene) {
  return predict_attention(net, attention_input(scene));
}

// ---- records ---------------------------------------------------------------

struct AttentionRecord {
  sim::SceneState scene;  // world frame
  AttentionLabel label;
  std::string dataset;
  int frame = 0;
  int episode = 0;
};

inline io::json record_to_json(const AttentionRecord& r) {
  io::json j;
  j["scene"] = io::scene_to_json(r.scene);
  j["label"] = r.label.weights;
  j["meta"] = {{"dataset", r.dataset}, {"frame", r.frame}, {"episode", r.episode}};
  return j;
}

inline AttentionRecord record_from_json(const io::json& j) {
  if (!j.is_object() || !j.contains("scene") || !j.contains("label"))
    throw io::FormatError("attention record needs scene and label");
  AttentionRecord r;
  r.scene = io::scene_from_json(j["scene"]);
  if (!j["label"].is_array()) throw io::FormatError("label must be an array");
  for (const auto& w : j["label"]) {
    if (!w.is_number()) throw io::FormatError("label entries must be numbers");
    r.label.weights.push_back(w.get<double>());
  }
  if (r.label.size() != r.scene.humans.size() + 2)
    throw io::FormatError("label length must equal humans + 2");
  if (!r.label.valid(1e-6)) throw io::FormatError("label must be non-negative and sum to one");
  if (j.contains("meta") && j["meta"].is_object()) {
    const auto& m = j["meta"];
    if (m.contains("dataset") && m["dataset"].is_string()) r.dataset = m["dataset"].get<std::string>();
    if (m.contains("frame") && m["frame"].is_number_integer()) r.frame = m["frame"].get<int>();
    if (m.contains("episode") && m["episode"].is_number_integer()) r.episode = m["episode"].get<int>();
  }
  return r;
}

inline std::string write_records(const std::vector<AttentionRecord>& records) {
  std::string out;
  for (const auto& r : records) out += record_to_json(r).dump() + "\n";
  return out;
}

inline std::vector<AttentionRecord> parse_records(const std::string& text) {
  std::vector<AttentionRecord> out;
  std::size_t line = 0;
  for (const auto& j : io::parse_jsonl(text)) {
    ++line;
    try {
      out.push_back(record_from_json(j));
    } catch (const io::FormatError& e) {
      throw io::FormatError("record " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

// ---- gaze session files ----------------------------------------------------

struct GazeSession {
  std::string session_id;
  double sigma = kDefaultSigma;
  double window = kDefaultWindow;
  double meters_per_degree = kDefaultSigma / 2.0;
  std::vector<GazeSample> samples;
};

inline std::string write_gaze_session(const GazeSession& s) {
  io::json header{{"type", "header"},
                  {"session", s.session_id},
                  {"sigma", s.sigma},
                  {"window", s.window},
                  {"meters_per_degree", s.meters_per_degree},
                  {"sigma_degrees", s.sigma / s.meters_per_degree}};
  std::string out = header.dump() + "\n";
  for (const auto& g : s.samples) out += io::json{{"t", g.t}, {"x", g.point.x}, {"y", g.point.y}}.dump() + "\n";
  return out;
}

inline GazeSession parse_gaze_session(const std::string& text) {
  const auto lines = io::parse_jsonl(text);
  if (lines.empty() || !lines[0].is_object() || lines[0].value("type", "") != "header")
    throw io::FormatError("gaze session must start with a header line");
  GazeSession s;
  const auto& h = lines[0];
  s.session_id = h.value("session", "");
  s.sigma = io::require_number(h, "sigma");
  s.window = io::require_number(h, "window");
  if (h.contains("meters_per_degree")) s.meters_per_degree = io::require_number(h, "meters_per_degree");
  if (!(s.sigma > 0.0) || !(s.window >= 0.0)) throw io::FormatError("invalid sigma/window");
  double last_t = -kInf;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    GazeSample g{io::require_number(lines[i], "t"),
                 {io::require_number(lines[i], "x"), io::require_number(lines[i], "y")}};
    if (g.t < last_t) throw io::FormatError("gaze timestamps must be non-decreasing");
    last_t = g.t;
    s.samples.push_back(g);
  }
  return s;
}

// One record per state with gaze inside its window; states without gaze are skipped.
inline std::vector<AttentionRecord> records_from_session(const std::vector<sim::SceneState>& states,
                                                         const GazeSession& gaze,
                                                         const std::string& dataset, int episode = 0) {
  std::vector<AttentionRecord> out;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& s = states[i];
    if ((s.robot.goal - s.robot.position).norm() <= sim::kFrameEpsilon) continue;
    try {
      auto label = gaze_to_label(gaze.samples, s.time, node_positions(s), gaze.sigma, gaze.window);
      out.push_back({s, std::move(label), dataset, static_cast<int>(i), episode});
    } catch (const NoGazeInWindow&) {
    }
  }
  return out;
}

// ---- training --------------------------------------------------------------

struct PreparedRecord {
  Matrix input;
  Matrix adjacency;
  Matrix target;  // column of label weights
};

inline PreparedRecord prepare(const AttentionRecord& r) {
  PreparedRecord p;
  p.input = attention_input(r.scene);
  p.adjacency = star_adjacency(static_cast<int>(p.input.rows()));
  p.target = Matrix(p.input.rows(), 1);
  for (std::size_t i = 0; i < r.label.size(); ++i) p.target(static_cast<nn::Index>(i), 0) = r.label[i];
  return p;
}

struct AttentionTraining {
  AttentionNet net;
  std::vector<double> loss_curve;  // mean train-mode L1 per epoch
  std::size_t epochs_done = 0;
};

// Mean eval-mode L1 between predictions and labels.
inline double evaluate_l1(const AttentionNet& net, const std::vector<PreparedRecord>& data) {
  double total = 0.0;
  double count = 0.0;
  for (const auto& p : data) {
    const auto g = nn::GraphBatch::single(p.adjacency);
    const Matrix w = segment_softmax(nn::forward(net.net, p.input, nn::Mode::Eval, nullptr, nullptr, &g), g);
    total += (w - p.target).cwiseAbs().sum();
    count += static_cast<double>(w.size());
  }
  return count > 0.0 ? total / count : 0.0;
}

// Runs epochs [start.epochs_done, config.epochs). Shuffling and dropout streams are
// derived from (seed, epoch), so a resumed run continues bit-identically.
inline AttentionTraining train_attention(const std::vector<AttentionRecord>& dataset, const nn::TrainConfig& config,
                                         AttentionTraining start) {
  if (dataset.empty()) throw InvalidArgument("train_attention: empty dataset");
  std::vector<PreparedRecord> data;
  data.reserve(dataset.size());
  for (const auto& r : dataset) data.push_back(prepare(r));
  const std::size_t batch = std::max<std::size_t>(config.batch_size, 1);
  auto& net = start.net.net;
  for (std::size_t epoch = start.epochs_done; epoch < config.epochs; ++epoch) {
    Rng order_rng(derive_seed(config.seed, 2 * epoch));
    Rng dropout_rng(derive_seed(config.seed, 2 * epoch + 1));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      nn::GraphBatch graph;
      nn::Index rows = 0;
      for (std::size_t i = b; i < e; ++i) rows += data[order[i]].input.rows();
      Matrix x(rows, 4), target(rows, 1);
      nn::Index at = 0;
      for (std::size_t i = b; i < e; ++i) {
        const auto& p = data[order[i]];
        x.middleRows(at, p.input.rows()) = p.input;
        target.middleRows(at, p.input.rows()) = p.target;
        at += p.input.rows();
        graph.add(p.adjacency);
      }
      nn::ForwardCache cache;
      const Matrix logits = nn::forward(net, x, nn::Mode::Train, &dropout_rng, &cache, &graph);
      const Matrix w = segment_softmax(logits, graph);
      const auto l = nn::loss(nn::LossKind::L1, w, target);
      nn::backward(net, cache, segment_softmax_backward(w, l.grad, graph));
      nn::optimizer_step(net.params, config);
      epoch_loss += l.value;
      ++batches;
    }
    start.loss_curve.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
    start.epochs_done = epoch + 1;
  }
  return start;
}

inline AttentionTraining train_attention(const std::vector<AttentionRecord>& dataset, const nn::TrainConfig& config) {
  return train_attention(dataset, config, AttentionTraining{AttentionNet::create(config.seed), {}, 0});
}

inline std::string save_attention(const std::string& path, const AttentionTraining& t, bool with_optimizer = true) {
  return nn::save_checkpoint(path, {{"attention", t.net.net}}, with_optimizer,
                             {{"kind", "attention"}, {"epochs_done", t.epochs_done}, {"loss_curve", t.loss_curve}});
}

inline AttentionTraining load_attention(const std::string& path, std::string* hash = nullptr) {
  const auto ck = nn::load_checkpoint(path);
  AttentionTraining t;
  t.net.net = ck.get("attention");
  if (t.net.net.specs.size() != 5 || t.net.net.specs[0] != nn::LayerSpec::graph_conv(4, t.net.net.specs[0].out))
    throw nn::IncompatibleCheckpoint("checkpoint is not an attention network");
  const auto& meta = ck.metadata.contains("meta") ? ck.metadata["meta"] : io::json::object();
  t.epochs_done = meta.value("epochs_done", static_cast<std::size_t>(0));
  if (meta.contains("loss_curve")) t.loss_curve = meta["loss_curve"].get<std::vector<double>>();
  if (hash) *hash = ck.hash;
  return t;
}

}  // namespace gazenav::attention
