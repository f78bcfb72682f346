#include <gtest/gtest.h>

#include "gazenav/gradcheck.hpp"
#include "gazenav/nn.hpp"

using namespace gazenav;
using namespace gazenav::nn;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double lo = -1, double hi = 1) {
  Matrix m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = uniform(rng, lo, hi);
  return m;
}

}  // namespace

TEST(RowNormalize, Examples) {
  const auto r = row_normalize(make_matrix(2, 2, {2, 2, 1, 3}));
  EXPECT_EQ(r, make_matrix(2, 2, {0.5, 0.5, 0.25, 0.75}));
  EXPECT_EQ(row_normalize(Matrix::Identity(4, 4)), Matrix::Identity(4, 4));
  EXPECT_THROW(row_normalize(make_matrix(2, 2, {1, 1, 0, 0})), ZeroRow);
}

TEST(RowNormalize, RowsSumToOne) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const auto a = row_normalize(random_matrix(7, 7, rng, 0.01, 3));
    for (Index r = 0; r < 7; ++r) EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-12);
  }
}

TEST(GcnForward, IdentityPassThrough) {
  Rng rng(2);
  const Matrix h = random_matrix(4, 3, rng, 0, 2);
  EXPECT_EQ(gcn_forward(Matrix::Identity(4, 4), h, Matrix::Identity(3, 3), Activation::ReLU), h);
}

TEST(GcnForward, HandComputed) {
  const auto out = gcn_forward(make_matrix(2, 2, {0.5, 0.5, 0.5, 0.5}), make_matrix(2, 1, {2, 0}),
                               make_matrix(1, 1, {1}), Activation::ReLU);
  EXPECT_EQ(out, make_matrix(2, 1, {1, 1}));
}

TEST(GcnForward, NegativeEntriesClamped) {
  const auto out = gcn_forward(Matrix::Identity(2, 2), make_matrix(2, 2, {-1, 2, 3, -4}), Matrix::Identity(2, 2),
                               Activation::ReLU);
  EXPECT_EQ(out(0, 0), 0.0);
  EXPECT_EQ(out(1, 1), 0.0);
  EXPECT_EQ(out(0, 1), 2.0);
}

TEST(GcnForward, ShapeMismatch) {
  EXPECT_THROW(gcn_forward(Matrix::Identity(3, 3), Matrix::Zero(2, 2), Matrix::Zero(2, 2), Activation::ReLU),
               ShapeMismatch);
}

TEST(GcnForward, IdentityAdjacencyIsLinear) {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    Network gc({LayerSpec::graph_conv(4, 3)}, rng);
    Network lin({LayerSpec::linear(4, 3, false)}, rng);
    lin.params.layers[0].weight->value = gc.params.layers[0].weight->value;
    const Matrix x = random_matrix(5, 4, rng);
    const auto g = GraphBatch::single(Matrix::Identity(5, 5));
    EXPECT_LE((forward(gc, x, Mode::Eval, nullptr, nullptr, &g) - forward(lin, x, Mode::Eval)).cwiseAbs().maxCoeff(),
              1e-15);
  }
}

TEST(Forward, DropoutEvalIsIdentity) {
  Rng rng(4);
  Network net({LayerSpec::dropout(0.5)}, rng);
  const Matrix x = random_matrix(3, 3, rng);
  EXPECT_EQ(forward(net, x, Mode::Eval), x);
}

TEST(Forward, DropoutMasksReproducible) {
  Rng rng(5);
  Network net({LayerSpec::dropout(0.5)}, rng);
  const Matrix x = Matrix::Ones(10, 10);
  Rng a(9), b(9);
  const Matrix ya = forward(net, x, Mode::Train, &a), yb = forward(net, x, Mode::Train, &b);
  EXPECT_EQ(ya, yb);
  for (Index k = 0; k < ya.size(); ++k) EXPECT_TRUE(ya.data()[k] == 0.0 || ya.data()[k] == 2.0);
}

TEST(Forward, SoftmaxUniformAndNormalized) {
  Rng rng(6);
  Network net({LayerSpec::softmax_row()}, rng);
  const Matrix y = forward(net, Matrix::Zero(1, 3), Mode::Eval);
  for (Index c = 0; c < 3; ++c) EXPECT_NEAR(y(0, c), 1.0 / 3.0, 1e-15);
  for (int k = 0; k < 100; ++k) {
    const Matrix z = forward(net, random_matrix(4, 6, rng, -50, 50), Mode::Eval);
    for (Index r = 0; r < 4; ++r) {
      EXPECT_NEAR(z.row(r).sum(), 1.0, 1e-12);
      EXPECT_GT(z.row(r).minCoeff(), 0.0 - 1e-300);
    }
  }
}

TEST(Forward, ShapeMismatch) {
  Rng rng(7);
  Network net({LayerSpec::linear(3, 2)}, rng);
  EXPECT_THROW(forward(net, Matrix::Zero(2, 4), Mode::Eval), ShapeMismatch);
  Network gc({LayerSpec::graph_conv(3, 2)}, rng);
  EXPECT_THROW(forward(gc, Matrix::Zero(2, 3), Mode::Eval), ShapeMismatch);
}

TEST(Backward, LinearClosedForm) {
  Rng rng(8);
  Network net({LayerSpec::linear(2, 2, false)}, rng);
  const Matrix x = make_matrix(2, 2, {1, 2, 3, 4});
  const Matrix y = make_matrix(2, 2, {0, 1, 1, 0});
  ForwardCache cache;
  const Matrix pred = forward(net, x, Mode::Train, nullptr, &cache);
  // Sum of squared errors over the batch, averaged over rows: 2 X^T (XW - Y) / batch.
  const Matrix dl = 2.0 * (pred - y) / 2.0;
  backward(net, cache, dl);
  const Matrix& w = net.params.layers[0].weight->value;
  const Matrix expect = 2.0 * x.transpose() * (x * w - y) / 2.0;
  EXPECT_LE((net.params.layers[0].weight->grad - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(9);
  Network net({LayerSpec::linear(3, 4), LayerSpec::relu(), LayerSpec::linear(4, 2)}, rng);
  ForwardCache cache;
  forward(net, random_matrix(5, 3, rng), Mode::Train, nullptr, &cache);
  const Matrix dx = backward(net, cache, Matrix::Zero(5, 2));
  EXPECT_EQ(dx.cwiseAbs().maxCoeff(), 0.0);
  net.params.for_each_tensor([](const Tensor& t) { EXPECT_EQ(t.grad.cwiseAbs().maxCoeff(), 0.0); });
}

TEST(Backward, StaleCache) {
  Rng rng(10);
  Network net({LayerSpec::linear(3, 4)}, rng);
  ForwardCache cache;
  forward(net, random_matrix(2, 3, rng), Mode::Train, nullptr, &cache);
  Network other({LayerSpec::linear(3, 4), LayerSpec::relu()}, rng);
  EXPECT_THROW(backward(other, cache, Matrix::Zero(2, 4)), StaleCache);
}

TEST(GradientCheck, EveryLayerKind) {
  const auto sweep = gradient_sweep(100);
  EXPECT_LT(sweep.max_rel_error, 1e-4) << sweep.worst_case;
  EXPECT_GT(sweep.checked, 1000u);
}

TEST(GradientCheck, AdjacencyGradient) {
  Rng rng(11);
  Network net({LayerSpec::graph_conv(3, 2), LayerSpec::relu(), LayerSpec::graph_conv(2, 1)}, rng);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix a = random_adjacency(4, rng);
  const Matrix probe = random_matrix(4, 1, rng);
  auto f = [&](const Matrix& adj) {
    const auto g = GraphBatch::single(adj);
    return forward(net, x, Mode::Eval, nullptr, nullptr, &g).cwiseProduct(probe).sum();
  };
  const auto g = GraphBatch::single(a);
  ForwardCache cache;
  forward(net, x, Mode::Eval, nullptr, &cache, &g);
  std::vector<Matrix> da;
  backward(net, cache, probe, &da);
  ASSERT_EQ(da.size(), 1u);
  for (Index k = 0; k < a.size(); ++k) {
    Matrix up = a, down = a;
    up.data()[k] += 1e-5;
    down.data()[k] -= 1e-5;
    EXPECT_LT(relative_error(da[0].data()[k], (f(up) - f(down)) / 2e-5), 1e-4);
  }
}

TEST(Loss, Examples) {
  const auto zero = loss(LossKind::MSE, make_matrix(1, 2, {1, 2}), make_matrix(1, 2, {1, 2}));
  EXPECT_EQ(zero.value, 0.0);
  EXPECT_EQ(zero.grad.cwiseAbs().maxCoeff(), 0.0);
  const auto l1 = loss(LossKind::L1, make_matrix(1, 1, {2}), make_matrix(1, 1, {0}));
  EXPECT_EQ(l1.value, 2.0);
  EXPECT_EQ(l1.grad(0, 0), 1.0);
  const auto l1b = loss(LossKind::L1, make_matrix(1, 2, {2, 0}), make_matrix(1, 2, {0, 0}));
  EXPECT_EQ(l1b.grad(0, 0), 0.5);
  EXPECT_EQ(loss(LossKind::MSE, make_matrix(1, 1, {3}), make_matrix(1, 1, {1})).value, 4.0);
  EXPECT_THROW(loss(LossKind::MSE, Matrix::Zero(1, 2), Matrix::Zero(2, 1)), ShapeMismatch);
}

TEST(Optimizer, ZeroGradientsKeepParams) {
  Rng rng(12);
  Network net({LayerSpec::linear(3, 3)}, rng);
  const auto before = net.params.layers[0].weight->value;
  OptimizerConfig sgd{OptimizerKind::SGD};
  optimizer_step(net.params, 0.1, sgd);
  optimizer_step(net.params, 0.1, OptimizerConfig{});
  EXPECT_EQ(net.params.layers[0].weight->value, before);
}

TEST(Optimizer, SgdStep) {
  Rng rng(13);
  Network net({LayerSpec::linear(1, 1, false)}, rng);
  auto& w = *net.params.layers[0].weight;
  w.value(0, 0) = 0.0;
  w.grad(0, 0) = 1.0;
  optimizer_step(net.params, 0.1, OptimizerConfig{OptimizerKind::SGD});
  EXPECT_NEAR(w.value(0, 0), -0.1, 1e-15);
  EXPECT_EQ(w.grad(0, 0), 0.0);
}

TEST(Optimizer, AdamFirstStepIsLr) {
  Rng rng(14);
  Network net({LayerSpec::linear(1, 1, false)}, rng);
  auto& w = *net.params.layers[0].weight;
  w.value(0, 0) = 0.5;
  w.grad(0, 0) = 1.0;
  optimizer_step(net.params, 1e-3, OptimizerConfig{});
  EXPECT_NEAR(0.5 - w.value(0, 0), 1e-3, 1e-10);
}

TEST(Training, LinearDataFitsExactly) {
  Rng rng(15);
  const Matrix x = random_matrix(50, 3, rng);
  const Matrix w_true = random_matrix(3, 2, rng);
  const Matrix y = x * w_true;
  Network net({LayerSpec::linear(3, 2)}, rng);
  double last = 0.0;
  for (int it = 0; it < 3000; ++it) {
    ForwardCache cache;
    const Matrix pred = forward(net, x, Mode::Train, nullptr, &cache);
    const auto l = loss(LossKind::MSE, pred, y);
    last = l.value;
    backward(net, cache, l.grad);
    optimizer_step(net.params, 0.3, OptimizerConfig{OptimizerKind::SGD, 0.5});
  }
  EXPECT_LT(last, 1e-8);
}

TEST(GraphBatchTest, BlockDiagonalMatchesSeparate) {
  Rng rng(16);
  Network net({LayerSpec::graph_conv(3, 2), LayerSpec::relu()}, rng);
  const Matrix x1 = random_matrix(2, 3, rng), x2 = random_matrix(4, 3, rng);
  const Matrix a1 = random_adjacency(2, rng), a2 = random_adjacency(4, rng);
  GraphBatch both;
  both.add(a1);
  both.add(a2);
  Matrix x(6, 3);
  x << x1, x2;
  const auto g1 = GraphBatch::single(a1), g2 = GraphBatch::single(a2);
  const Matrix y = forward(net, x, Mode::Eval, nullptr, nullptr, &both);
  EXPECT_LE((y.topRows(2) - forward(net, x1, Mode::Eval, nullptr, nullptr, &g1)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((y.bottomRows(4) - forward(net, x2, Mode::Eval, nullptr, nullptr, &g2)).cwiseAbs().maxCoeff(), 1e-15);
}
