#pragma once

// Central finite-difference verification of analytic gradients. The scalar
// probed is L = sum(out .* R) for a fixed random R; dropout masks are frozen by
// replaying the same rng seed on every forward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gazenav/nn.hpp"

namespace gazenav::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "weight[l](i)", "bias[l](i)" or "input(i)"
};

inline double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(std::fabs(analytic) + std::fabs(numeric), 1e-7);
}

// Probes every weight, bias and input entry of `net` on `input`.
inline GradCheckResult gradient_check(Network net, const Matrix& input, const GraphBatch* graph, Mode mode,
                                      std::uint64_t seed, double h = 1e-5) {
  Rng probe_rng(derive_seed(seed, 1));
  Matrix probe;
  auto scalar = [&](const Network& n, const Matrix& x) {
    Rng rng(derive_seed(seed, 2));
    const Matrix out = forward(n, x, mode, &rng, nullptr, graph);
    if (probe.size() == 0) {
      probe.resize(out.rows(), out.cols());
      for (Index k = 0; k < probe.size(); ++k) probe.data()[k] = uniform(probe_rng, -1.0, 1.0);
    }
    return out.cwiseProduct(probe).sum();
  };
  scalar(net, input);

  Rng rng(derive_seed(seed, 2));
  ForwardCache cache;
  forward(net, input, mode, &rng, &cache, graph);
  net.params.zero_grad();
  const Matrix input_grad = backward(net, cache, probe);

  GradCheckResult res;
  auto record = [&](double a, double n, const std::string& where) {
    const double e = relative_error(a, n);
    ++res.checked;
    if (e > res.max_rel_error || res.worst.empty()) {
      res.max_rel_error = e;
      res.worst = where;
    }
  };
  auto probe_tensor = [&](Matrix& value, const Matrix& grad, const std::string& name) {
    for (Index k = 0; k < value.size(); ++k) {
      const double keep = value.data()[k];
      value.data()[k] = keep + h;
      const double up = scalar(net, input);
      value.data()[k] = keep - h;
      const double down = scalar(net, input);
      value.data()[k] = keep;
      record(grad.data()[k], (up - down) / (2.0 * h), name + "(" + std::to_string(k) + ")");
    }
  };
  for (std::size_t l = 0; l < net.params.layers.size(); ++l) {
    auto& lp = net.params.layers[l];
    if (lp.weight) {
      const Matrix g = lp.weight->grad;
      probe_tensor(lp.weight->value, g, "weight[" + std::to_string(l) + "]");
    }
    if (lp.bias) {
      const Matrix g = lp.bias->grad;
      probe_tensor(lp.bias->value, g, "bias[" + std::to_string(l) + "]");
    }
  }
  Matrix x = input;
  for (Index k = 0; k < x.size(); ++k) {
    const double keep = x.data()[k];
    x.data()[k] = keep + h;
    const double up = scalar(net, x);
    x.data()[k] = keep - h;
    const double down = scalar(net, x);
    x.data()[k] = keep;
    record(input_grad.data()[k], (up - down) / (2.0 * h), "input(" + std::to_string(k) + ")");
  }
  return res;
}

// Random row-normalized adjacency with a positive diagonal.
inline Matrix random_adjacency(Index n, Rng& rng) {
  Matrix a(n, n);
  for (Index k = 0; k < a.size(); ++k) a.data()[k] = uniform01(rng) < 0.5 ? 0.0 : uniform(rng, 0.1, 1.0);
  for (Index i = 0; i < n; ++i) a(i, i) += 0.5;
  return row_normalize(a);
}

struct LayerCase {
  std::string name;
  std::function<std::vector<LayerSpec>(Index in, Index out)> build;
  Mode mode = Mode::Eval;
};

// One small network per layer kind; every case has a weighted layer so the
// parameter path is exercised as well as the input path.
inline std::vector<LayerCase> layer_cases() {
  return {
      {"linear", [](Index i, Index o) { return std::vector{LayerSpec::linear(i, o)}; }, Mode::Eval},
      {"linear_no_bias", [](Index i, Index o) { return std::vector{LayerSpec::linear(i, o, false)}; }, Mode::Eval},
      {"graph_conv", [](Index i, Index o) { return std::vector{LayerSpec::graph_conv(i, o)}; }, Mode::Eval},
      {"relu", [](Index i, Index o) { return std::vector{LayerSpec::linear(i, o), LayerSpec::relu()}; }, Mode::Eval},
      {"softmax_row",
       [](Index i, Index o) { return std::vector{LayerSpec::linear(i, o), LayerSpec::softmax_row()}; }, Mode::Eval},
      {"dropout",
       [](Index i, Index o) { return std::vector{LayerSpec::linear(i, o), LayerSpec::dropout(0.5)}; }, Mode::Train},
      {"stack",
       [](Index i, Index o) {
         return std::vector{LayerSpec::graph_conv(i, o), LayerSpec::relu(), LayerSpec::dropout(0.3),
                            LayerSpec::graph_conv(o, 1), LayerSpec::softmax_row()};
       },
       Mode::Train},
  };
}

struct GradSweep {
  double max_rel_error = 0.0;
  std::string worst_case;
  std::size_t checked = 0;
};

// Every layer case over `seeds` random shapes with N, I, O in 1..max_dim.
inline GradSweep gradient_sweep(std::size_t seeds, Index max_dim = 5, double h = 1e-5) {
  GradSweep sweep;
  for (const auto& c : layer_cases()) {
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::uint64_t seed = derive_seed(fnv1a64(c.name), s);
      Rng rng(seed);
      const Index n = 1 + static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(max_dim)));
      const Index in = 1 + static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(max_dim)));
      const Index out = 1 + static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(max_dim)));
      Network net(c.build(in, out), rng);
      // Non-zero biases so they are not a special case.
      net.params.for_each_tensor([&](Tensor& t) {
        for (Index k = 0; k < t.value.size(); ++k) t.value.data()[k] += uniform(rng, -0.1, 0.1);
      });
      Matrix x(n, in);
      for (Index k = 0; k < x.size(); ++k) x.data()[k] = uniform(rng, -1.0, 1.0);
      const GraphBatch graph = GraphBatch::single(random_adjacency(n, rng));
      const auto r = gradient_check(net, x, &graph, c.mode, seed, h);
      sweep.checked += r.checked;
      if (r.max_rel_error >= sweep.max_rel_error) {
        sweep.max_rel_error = r.max_rel_error;
        sweep.worst_case = c.name + " seed " + std::to_string(s) + " " + r.worst;
      }
    }
  }
  return sweep;
}

}  // namespace gazenav::nn
