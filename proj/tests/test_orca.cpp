#include <gtest/gtest.h>

#include <algorithm>

#include "gazenav/dataset.hpp"
#include "gazenav/orca.hpp"

using namespace gazenav;
using orca::OrcaParams;
using sim::AgentState;

namespace {

AgentState agent(Vec2 p, Vec2 goal, Vec2 v = {}, double r = 0.3, double v_pref = 1.0) {
  AgentState a;
  a.position = p;
  a.goal = goal;
  a.velocity = v;
  a.radius = r;
  a.v_pref = v_pref;
  return a;
}

std::vector<AgentState> circle(int n, double radius, std::uint64_t seed) {
  const auto c = dataset::make_circle_crossing(n, radius, seed);
  return c.initial.humans;
}

double min_gap(const std::vector<AgentState>& a) {
  double m = kInf;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j)
      m = std::min(m, (a[i].position - a[j].position).norm() - a[i].radius - a[j].radius);
  return m;
}

}  // namespace

TEST(OrcaVelocity, UnconstrainedIsPreferred) {
  const auto v = orca::orca_velocity(agent({0, 0}, {10, 0}), {}, OrcaParams{});
  EXPECT_NEAR(v.x, 1.0, 1e-12);
  EXPECT_NEAR(v.y, 0.0, 1e-12);
}

TEST(OrcaVelocity, GoalClamping) {
  const auto v = orca::orca_velocity(agent({0, 0}, {0.1, 0}), {}, OrcaParams{});
  EXPECT_NEAR(v.norm(), 0.4, 1e-12);
}

TEST(OrcaVelocity, HeadOnSymmetric) {
  const auto a = agent({-2, 0}, {2, 0}, {1, 0});
  const auto b = agent({2, 0}, {-2, 0}, {-1, 0});
  const auto va = orca::orca_velocity(a, {b}, OrcaParams{});
  const auto vb = orca::orca_velocity(b, {a}, OrcaParams{});
  EXPECT_NEAR(va.y, -vb.y, 1e-9);
  EXPECT_NEAR(va.x, -vb.x, 1e-9);
}

TEST(OrcaVelocity, MirroredStatesMirrorVelocities) {
  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    const Vec2 p{uniform(rng, -3, 3), uniform(rng, 0.2, 3)};
    const Vec2 v{uniform(rng, -0.7, 0.7), uniform(rng, -0.7, 0.7)};
    const Vec2 g{uniform(rng, -3, 3), uniform(rng, -3, 3)};
    const Vec2 q{uniform(rng, -3, 3), uniform(rng, -3, 3)};
    const auto self = agent(p, g, v);
    const auto other = agent(q, -g, -v);
    auto mirror = [](AgentState a) {
      a.position.y = -a.position.y;
      a.velocity.y = -a.velocity.y;
      a.goal.y = -a.goal.y;
      return a;
    };
    const auto v1 = orca::orca_velocity(self, {other}, OrcaParams{});
    const auto v2 = orca::orca_velocity(mirror(self), {mirror(other)}, OrcaParams{});
    EXPECT_NEAR(v1.x, v2.x, 1e-6);
    EXPECT_NEAR(v1.y, -v2.y, 1e-6);
  }
}

TEST(OrcaVelocity, SpeedBounded) {
  Rng rng(5);
  for (int k = 0; k < 500; ++k) {
    std::vector<AgentState> others;
    const int n = static_cast<int>(uniform_index(rng, 8));
    for (int i = 0; i < n; ++i)
      others.push_back(agent({uniform(rng, -2, 2), uniform(rng, -2, 2)}, {0, 0},
                             {uniform(rng, -0.7, 0.7), uniform(rng, -0.7, 0.7)}));
    const double vp = uniform(rng, 0.3, 1.5);
    const auto self = agent({0, 0}, {uniform(rng, -5, 5), uniform(rng, -5, 5)}, {}, 0.3, vp);
    EXPECT_LE(orca::orca_velocity(self, others, OrcaParams{}).norm(), vp + 1e-12);
  }
}

TEST(OrcaVelocity, HalfPlaneNormalsUnit) {
  Rng rng(6);
  for (int k = 0; k < 200; ++k) {
    const auto a = agent({uniform(rng, -2, 2), uniform(rng, -2, 2)}, {5, 5}, {uniform(rng, -1, 1) * 0.7, 0});
    const auto b = agent({uniform(rng, -2, 2), uniform(rng, -2, 2)}, {-5, 5}, {0, uniform(rng, -1, 1) * 0.7});
    const auto h = orca::reciprocal_half_plane(a, b, OrcaParams{});
    EXPECT_NEAR(h.normal.norm(), 1.0, 1e-9);
  }
}

TEST(OrcaVelocity, NeighborLimit) {
  OrcaParams p;
  p.max_neighbors = 2;
  p.neighbor_dist = 3.0;
  std::vector<AgentState> n{agent({1, 0}, {}), agent({5, 0}, {}), agent({0, 2}, {}), agent({0, 1.5}, {})};
  const auto sel = orca::select_neighbors(agent({0, 0}, {1, 1}), n, p);
  ASSERT_EQ(sel.size(), 2u);
  EXPECT_EQ(sel[0], 0u);
  EXPECT_EQ(sel[1], 3u);
}

TEST(CrowdStep, SingleAgentStraight) {
  const auto next = orca::simulate_crowd_step({agent({0, 0}, {0, 5})}, OrcaParams{});
  EXPECT_NEAR(next[0].position.x, 0.0, 1e-12);
  EXPECT_NEAR(next[0].position.y, 0.25, 1e-12);
}

TEST(CrowdStep, OrderIndependent) {
  auto agents = circle(6, 4.0, 12);
  for (int s = 0; s < 10; ++s) agents = orca::simulate_crowd_step(agents, OrcaParams{});
  auto reversed = agents;
  std::reverse(reversed.begin(), reversed.end());
  const auto a = orca::simulate_crowd_step(agents, OrcaParams{});
  const auto b = orca::simulate_crowd_step(reversed, OrcaParams{});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].position.x, b[a.size() - 1 - i].position.x, 1e-9);
    EXPECT_NEAR(a[i].position.y, b[a.size() - 1 - i].position.y, 1e-9);
  }
}

TEST(CrowdStep, ArrivedAgentHolds) {
  const auto next = orca::simulate_crowd_step({agent({0, 0}, {0.1, 0})}, OrcaParams{});
  EXPECT_EQ(next[0].position.x, 0.0);
  EXPECT_EQ(next[0].position.y, 0.0);
}

TEST(CrowdStep, AntipodalSixReachGoals) {
  std::vector<AgentState> agents;
  for (int i = 0; i < 6; ++i) {
    const double a = 2 * M_PI * i / 6;
    const Vec2 p{4 * std::cos(a), 4 * std::sin(a)};
    agents.push_back(agent(p, -p));
  }
  double gap = kInf;
  for (int s = 0; s < 300; ++s) {
    agents = orca::simulate_crowd_step(agents, OrcaParams{});
    gap = std::min(gap, min_gap(agents));
  }
  EXPECT_GT(gap, 0.0);
  for (const auto& a : agents) EXPECT_LT((a.goal - a.position).norm(), a.radius);
}

TEST(CrowdStep, RandomCirclesCollisionFree) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto agents = circle(10, 4.0, seed);
    double gap = kInf;
    for (int s = 0; s < 240; ++s) {
      agents = orca::simulate_crowd_step(agents, OrcaParams{});
      gap = std::min(gap, min_gap(agents));
    }
    EXPECT_GT(gap, -1e-6) << "seed " << seed;
    for (const auto& a : agents) EXPECT_LT((a.goal - a.position).norm(), a.radius) << "seed " << seed;
  }
}
