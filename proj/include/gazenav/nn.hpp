#pragma once

// Small dense network stack: row-major 64-bit matrices, a closed set of layers
// (Linear, GraphConv, ReLU, SoftmaxRow, Dropout), analytic backprop, L1/MSE
// losses and SGD/Adam.
//
// Rows are nodes (or samples). GraphConv applies H' = A (H W) where A is
// block-diagonal over a batch of graphs, so several graphs share one GEMM.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gazenav/common.hpp"

namespace gazenav::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ZeroRow : public Error {
 public:
  explicit ZeroRow(Index row) : Error("row " + std::to_string(row) + " sums to zero") {}
};

class StaleCache : public Error {
 public:
  StaleCache() : Error("forward cache does not match the network") {}
};

inline Matrix make_matrix(Index rows, Index cols, std::initializer_list<double> values) {
  if (static_cast<Index>(values.size()) != rows * cols)
    throw ShapeMismatch("make_matrix: value count does not match shape");
  Matrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix row_normalize(const Matrix& a) {
  Matrix out = a;
  for (Index r = 0; r < a.rows(); ++r) {
    const double s = a.row(r).sum();
    if (s <= 1e-12) throw ZeroRow(r);
    out.row(r) /= s;
  }
  return out;
}

enum class Activation { Identity, ReLU };

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

inline Matrix gcn_forward(const Matrix& a, const Matrix& h, const Matrix& w, Activation act) {
  if (a.rows() != a.cols() || a.cols() != h.rows() || h.cols() != w.rows())
    throw ShapeMismatch("gcn_forward: inconsistent A/H/W shapes");
  Matrix out = a * (h * w);
  return act == Activation::ReLU ? relu(out) : out;
}

// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    double s = 0.0;
    for (Index c = 0; c < x.cols(); ++c) {
      out(r, c) = std::exp(x(r, c) - m);
      s += out(r, c);
    }
    out.row(r) /= s;
  }
  return out;
}

// d/dx of softmax given its output y and upstream gradient g.
inline Matrix softmax_rows_backward(const Matrix& y, const Matrix& g) {
  Matrix out(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const double inner = y.row(r).dot(g.row(r));
    for (Index c = 0; c < y.cols(); ++c) out(r, c) = y(r, c) * (g(r, c) - inner);
  }
  return out;
}

// ---- graph batches ---------------------------------------------------------

// Block-diagonal adjacency: graph k owns rows [offsets[k], offsets[k] + blocks[k].rows()).
struct GraphBatch {
  std::vector<Matrix> blocks;
  std::vector<Index> offsets;
  Index total = 0;

  void add(Matrix a) {
    if (a.rows() != a.cols()) throw ShapeMismatch("GraphBatch: adjacency must be square");
    offsets.push_back(total);
    total += a.rows();
    blocks.push_back(std::move(a));
  }
  static GraphBatch single(Matrix a) {
    GraphBatch g;
    g.add(std::move(a));
    return g;
  }
  std::size_t size() const { return blocks.size(); }

  // y = A x for each block.
  Matrix apply(const Matrix& x) const {
    if (x.rows() != total) throw ShapeMismatch("GraphBatch: row count does not match graphs");
    Matrix y(x.rows(), x.cols());
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const Index n = blocks[k].rows();
      y.middleRows(offsets[k], n).noalias() = blocks[k] * x.middleRows(offsets[k], n);
    }
    return y;
  }
  // y = A^T x for each block.
  Matrix apply_transpose(const Matrix& x) const {
    Matrix y(x.rows(), x.cols());
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const Index n = blocks[k].rows();
      y.middleRows(offsets[k], n).noalias() = blocks[k].transpose() * x.middleRows(offsets[k], n);
    }
    return y;
  }
};

// ---- layers ----------------------------------------------------------------

enum class LayerKind : std::uint8_t { Linear = 0, GraphConv = 1, ReLU = 2, SoftmaxRow = 3, Dropout = 4 };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Linear:
      return "Linear";
    case LayerKind::GraphConv:
      return "GraphConv";
    case LayerKind::ReLU:
      return "ReLU";
    case LayerKind::SoftmaxRow:
      return "SoftmaxRow";
    case LayerKind::Dropout:
      return "Dropout";
  }
  return "?";
}

inline std::optional<LayerKind> layer_kind_from_string(std::string_view s) {
  for (auto k : {LayerKind::Linear, LayerKind::GraphConv, LayerKind::ReLU, LayerKind::SoftmaxRow,
                 LayerKind::Dropout})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  Index in = 0;
  Index out = 0;
  bool bias = false;
  double p = 0.0;

  static LayerSpec linear(Index in, Index out, bool bias = true) {
    return {LayerKind::Linear, in, out, bias, 0.0};
  }
  static LayerSpec graph_conv(Index in, Index out) { return {LayerKind::GraphConv, in, out, false, 0.0}; }
  static LayerSpec relu() { return {LayerKind::ReLU, 0, 0, false, 0.0}; }
  static LayerSpec softmax_row() { return {LayerKind::SoftmaxRow, 0, 0, false, 0.0}; }
  static LayerSpec dropout(double p) { return {LayerKind::Dropout, 0, 0, false, p}; }

  bool has_weights() const { return kind == LayerKind::Linear || kind == LayerKind::GraphConv; }
  bool operator==(const LayerSpec&) const = default;
};

inline void validate_specs(const std::vector<LayerSpec>& specs) {
  for (const auto& s : specs) {
    if (s.has_weights() && (s.in <= 0 || s.out <= 0))
      throw InvalidArgument("layer dims must be positive");
    if (s.kind == LayerKind::Dropout && !(s.p >= 0.0 && s.p < 1.0))
      throw InvalidArgument("dropout p must lie in [0, 1)");
  }
}

inline std::uint64_t fingerprint(const std::vector<LayerSpec>& specs) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (const auto& s : specs) {
    h = splitmix64(h ^ static_cast<std::uint64_t>(s.kind));
    h = splitmix64(h ^ static_cast<std::uint64_t>(s.in));
    h = splitmix64(h ^ static_cast<std::uint64_t>(s.out));
    h = splitmix64(h ^ static_cast<std::uint64_t>(s.bias));
    std::uint64_t bits;
    std::memcpy(&bits, &s.p, sizeof bits);
    h = splitmix64(h ^ bits);
  }
  return h;
}

// A trainable tensor with its gradient and optimizer slots.
struct Tensor {
  Matrix value;
  Matrix grad;
  Matrix m;  // Adam first moment / SGD velocity
  Matrix v;  // Adam second moment

  static Tensor zeros(Index r, Index c) {
    return {Matrix::Zero(r, c), Matrix::Zero(r, c), Matrix::Zero(r, c), Matrix::Zero(r, c)};
  }
};

struct LayerParams {
  std::optional<Tensor> weight;
  std::optional<Tensor> bias;
};

struct NetParams {
  std::vector<LayerParams> layers;
  std::int64_t step = 0;  // optimizer steps taken

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& l : layers) {
      if (l.weight) f(*l.weight);
      if (l.bias) f(*l.bias);
    }
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for (const auto& l : layers) {
      if (l.weight) f(*l.weight);
      if (l.bias) f(*l.bias);
    }
  }
  void zero_grad() {
    for_each_tensor([](Tensor& t) { t.grad.setZero(); });
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const Tensor& t) { n += static_cast<std::size_t>(t.value.size()); });
    return n;
  }
};

// Glorot-uniform weights, zero biases.
inline NetParams init_params(const std::vector<LayerSpec>& specs, Rng& rng) {
  validate_specs(specs);
  NetParams p;
  for (const auto& s : specs) {
    LayerParams lp;
    if (s.has_weights()) {
      lp.weight = Tensor::zeros(s.in, s.out);
      const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
      for (Index i = 0; i < lp.weight->value.size(); ++i)
        lp.weight->value.data()[i] = uniform(rng, -limit, limit);
      if (s.bias) lp.bias = Tensor::zeros(1, s.out);
    }
    p.layers.push_back(std::move(lp));
  }
  return p;
}

struct Network {
  std::vector<LayerSpec> specs;
  NetParams params;

  Network() = default;
  Network(std::vector<LayerSpec> s, Rng& rng) : specs(std::move(s)), params(init_params(specs, rng)) {}
};

enum class Mode { Train, Eval };

struct ForwardCache {
  std::uint64_t spec_fingerprint = 0;
  std::vector<Matrix> inputs;   // input to each layer
  std::vector<Matrix> outputs;  // output of each layer
  std::vector<Matrix> masks;    // dropout masks (already scaled); empty when inactive
  std::vector<Matrix> projected;  // H W for GraphConv layers
  const GraphBatch* graph = nullptr;
};

inline Matrix forward(const std::vector<LayerSpec>& specs, const NetParams& params, const Matrix& input,
                      Mode mode, Rng* rng = nullptr, ForwardCache* cache = nullptr,
                      const GraphBatch* graph = nullptr) {
  if (params.layers.size() != specs.size()) throw ShapeMismatch("forward: params do not match specs");
  if (cache) {
    cache->spec_fingerprint = fingerprint(specs);
    cache->inputs.assign(specs.size(), Matrix());
    cache->outputs.assign(specs.size(), Matrix());
    cache->masks.assign(specs.size(), Matrix());
    cache->projected.assign(specs.size(), Matrix());
    cache->graph = graph;
  }
  Matrix x = input;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (cache) cache->inputs[i] = x;
    switch (s.kind) {
      case LayerKind::Linear: {
        if (x.cols() != s.in) throw ShapeMismatch("Linear: input width mismatch");
        Matrix y = x * params.layers[i].weight->value;
        if (s.bias) y.rowwise() += params.layers[i].bias->value.row(0);
        x = std::move(y);
        break;
      }
      case LayerKind::GraphConv: {
        if (!graph) throw ShapeMismatch("GraphConv: no adjacency supplied");
        if (x.cols() != s.in) throw ShapeMismatch("GraphConv: input width mismatch");
        Matrix hw = x * params.layers[i].weight->value;
        x = graph->apply(hw);
        if (cache) cache->projected[i] = std::move(hw);
        break;
      }
      case LayerKind::ReLU:
        x = relu(x);
        break;
      case LayerKind::SoftmaxRow:
        x = softmax_rows(x);
        break;
      case LayerKind::Dropout: {
        if (mode == Mode::Train && s.p > 0.0) {
          if (!rng) throw InvalidArgument("Dropout in Train mode needs an rng");
          Matrix mask(x.rows(), x.cols());
          const double keep = 1.0 / (1.0 - s.p);
          for (Index k = 0; k < mask.size(); ++k) mask.data()[k] = uniform01(*rng) < s.p ? 0.0 : keep;
          x = x.cwiseProduct(mask);
          if (cache) cache->masks[i] = std::move(mask);
        }
        break;
      }
    }
    if (cache) cache->outputs[i] = x;
  }
  return x;
}

inline Matrix forward(const Network& net, const Matrix& input, Mode mode, Rng* rng = nullptr,
                      ForwardCache* cache = nullptr, const GraphBatch* graph = nullptr) {
  return forward(net.specs, net.params, input, mode, rng, cache, graph);
}

// Accumulates parameter gradients and returns dL/dinput. When `graph_grad` is
// given, dL/dA for every GraphConv is accumulated into it (one matrix per block).
inline Matrix backward(const std::vector<LayerSpec>& specs, NetParams& params, const ForwardCache& cache,
                       const Matrix& loss_grad, std::vector<Matrix>* graph_grad = nullptr) {
  if (cache.spec_fingerprint != fingerprint(specs) || cache.inputs.size() != specs.size() ||
      params.layers.size() != specs.size())
    throw StaleCache();
  Matrix g = loss_grad;
  for (std::size_t ii = specs.size(); ii-- > 0;) {
    const auto& s = specs[ii];
    const Matrix& x = cache.inputs[ii];
    switch (s.kind) {
      case LayerKind::Linear: {
        auto& lp = params.layers[ii];
        lp.weight->grad.noalias() += x.transpose() * g;
        if (s.bias) lp.bias->grad.row(0) += g.colwise().sum();
        g = g * lp.weight->value.transpose();
        break;
      }
      case LayerKind::GraphConv: {
        const GraphBatch& graph = *cache.graph;
        auto& lp = params.layers[ii];
        if (graph_grad) {
          if (graph_grad->size() != graph.size()) {
            graph_grad->clear();
            for (const auto& b : graph.blocks) graph_grad->push_back(Matrix::Zero(b.rows(), b.cols()));
          }
          const Matrix& hw = cache.projected[ii];
          for (std::size_t k = 0; k < graph.size(); ++k) {
            const Index n = graph.blocks[k].rows();
            (*graph_grad)[k].noalias() +=
                g.middleRows(graph.offsets[k], n) * hw.middleRows(graph.offsets[k], n).transpose();
          }
        }
        const Matrix ghw = graph.apply_transpose(g);
        lp.weight->grad.noalias() += x.transpose() * ghw;
        g = ghw * lp.weight->value.transpose();
        break;
      }
      case LayerKind::ReLU:
        g = g.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
        break;
      case LayerKind::SoftmaxRow:
        g = softmax_rows_backward(cache.outputs[ii], g);
        break;
      case LayerKind::Dropout:
        if (cache.masks[ii].size() > 0) g = g.cwiseProduct(cache.masks[ii]);
        break;
    }
  }
  return g;
}

inline Matrix backward(Network& net, const ForwardCache& cache, const Matrix& loss_grad,
                       std::vector<Matrix>* graph_grad = nullptr) {
  return backward(net.specs, net.params, cache, loss_grad, graph_grad);
}

// ---- losses ----------------------------------------------------------------

enum class LossKind { L1, MSE };

struct LossResult {
  double value = 0.0;
  Matrix grad;
};

inline LossResult loss(LossKind kind, const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeMismatch("loss: prediction and target shapes differ");
  const double count = static_cast<double>(std::max<Index>(pred.size(), 1));
  const Matrix diff = pred - target;
  LossResult r;
  if (kind == LossKind::L1) {
    r.value = diff.cwiseAbs().sum() / count;
    r.grad = diff.unaryExpr([](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); }) / count;
  } else {
    r.value = diff.squaredNorm() / count;
    r.grad = diff * (2.0 / count);
  }
  return r;
}

// ---- optimization ----------------------------------------------------------

enum class OptimizerKind { SGD, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 100;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
};

inline void optimizer_step(NetParams& params, double lr, const OptimizerConfig& opt) {
  ++params.step;
  const double t = static_cast<double>(params.step);
  params.for_each_tensor([&](Tensor& w) {
    if (opt.kind == OptimizerKind::SGD) {
      w.m = opt.momentum * w.m + w.grad;
      w.value -= lr * w.m;
    } else {
      w.m = opt.beta1 * w.m + (1.0 - opt.beta1) * w.grad;
      w.v = opt.beta2 * w.v + (1.0 - opt.beta2) * w.grad.cwiseProduct(w.grad);
      const double c1 = 1.0 - std::pow(opt.beta1, t);
      const double c2 = 1.0 - std::pow(opt.beta2, t);
      w.value.array() -= lr * (w.m.array() / c1) / ((w.v.array() / c2).sqrt() + opt.eps);
    }
    w.grad.setZero();
  });
}

inline void optimizer_step(NetParams& params, const TrainConfig& config) {
  optimizer_step(params, config.learning_rate, config.optimizer);
}

}  // namespace gazenav::nn
