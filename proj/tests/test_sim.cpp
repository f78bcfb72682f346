#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "gazenav/sim.hpp"
#include "gazenav/reward.hpp"

using namespace gazenav;
using sim::Action;
using sim::AgentState;
using sim::SceneState;

namespace {

AgentState agent(Vec2 p, Vec2 goal = {10, 0}, Vec2 v = {}, double r = 0.3) {
  AgentState a;
  a.position = p;
  a.goal = goal;
  a.velocity = v;
  a.radius = r;
  return a;
}

SceneState random_scene(Rng& rng, int n) {
  SceneState s;
  s.robot = agent({uniform(rng, -5, 5), uniform(rng, -5, 5)}, {uniform(rng, -5, 5), uniform(rng, -5, 5)},
                  {uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)});
  for (int i = 0; i < n; ++i)
    s.humans.push_back(agent({uniform(rng, -5, 5), uniform(rng, -5, 5)}, {uniform(rng, -5, 5), uniform(rng, -5, 5)},
                             {uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)}));
  return s;
}

}  // namespace

TEST(StepRobot, IntegratesPosition) {
  const auto a = sim::step_robot(agent({0, 0}), {1, 0}, 0.25);
  EXPECT_DOUBLE_EQ(a.position.x, 0.25);
  EXPECT_DOUBLE_EQ(a.position.y, 0.0);
  EXPECT_DOUBLE_EQ(a.velocity.x, 1.0);
}

TEST(StepRobot, ZeroActionKeepsHeading) {
  auto s = agent({1, 1});
  s.heading = 0.7;
  const auto a = sim::step_robot(s, {0, 0}, 0.25);
  EXPECT_DOUBLE_EQ(a.position.x, 1.0);
  EXPECT_DOUBLE_EQ(a.position.y, 1.0);
  EXPECT_DOUBLE_EQ(a.heading, 0.7);
}

TEST(StepRobot, DiagonalAction) {
  const auto a = sim::step_robot(agent({0, 0}), {0.6, 0.8}, 0.5);
  EXPECT_NEAR(a.position.x, 0.3, 1e-15);
  EXPECT_NEAR(a.position.y, 0.4, 1e-15);
  EXPECT_DOUBLE_EQ(a.heading, std::atan2(0.8, 0.6));
}

TEST(StepRobot, RejectsBadInput) {
  EXPECT_THROW(sim::step_robot(agent({0, 0}), {std::nan(""), 0}, 0.25), InvalidArgument);
  EXPECT_THROW(sim::step_robot(agent({0, 0}), {kInf, 0}, 0.25), InvalidArgument);
  EXPECT_THROW(sim::step_robot(agent({0, 0}), {2, 0}, 0.25), InvalidArgument);
  EXPECT_THROW(sim::step_robot(agent({0, 0}), {0.5, 0}, 0.0), InvalidArgument);
}

TEST(StepRobot, HalfStepsAddUp) {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const auto s = agent({uniform(rng, -3, 3), uniform(rng, -3, 3)});
    const Action a{uniform(rng, -0.7, 0.7), uniform(rng, -0.7, 0.7)};
    const double dt = uniform(rng, 0.01, 1.0);
    const auto one = sim::step_robot(s, a, dt);
    const auto two = sim::step_robot(sim::step_robot(s, a, dt / 2), a, dt / 2);
    EXPECT_NEAR(one.position.x, two.position.x, 1e-12);
    EXPECT_NEAR(one.position.y, two.position.y, 1e-12);
    EXPECT_EQ(one.heading, two.heading);
  }
}

TEST(RobotFrame, IdentityWhenGoalOnX) {
  SceneState s;
  s.robot = agent({0, 0}, {4, 0});
  s.humans.push_back(agent({1, 1}));
  const auto f = sim::to_robot_frame(s);
  EXPECT_NEAR(f.humans[0].position.x, 1.0, 1e-15);
  EXPECT_NEAR(f.humans[0].position.y, 1.0, 1e-15);
}

TEST(RobotFrame, RotatesGoalOntoX) {
  SceneState s;
  s.robot = agent({0, 0}, {0, 4});
  s.humans.push_back(agent({0, 2}));
  const auto f = sim::to_robot_frame(s);
  EXPECT_NEAR(f.humans[0].position.x, 2.0, 1e-15);
  EXPECT_NEAR(f.humans[0].position.y, 0.0, 1e-15);
  EXPECT_NEAR(f.robot.goal.x, 4.0, 1e-15);
  EXPECT_NEAR(f.robot.goal.y, 0.0, 1e-15);
}

TEST(RobotFrame, TranslatesThenRotates) {
  SceneState s;
  s.robot = agent({2, 2}, {2, 6}, {0, 1});
  const auto f = sim::to_robot_frame(s);
  EXPECT_EQ(f.robot.position.x, 0.0);
  EXPECT_EQ(f.robot.position.y, 0.0);
  EXPECT_NEAR(f.robot.velocity.x, 1.0, 1e-15);
  EXPECT_NEAR(f.robot.velocity.y, 0.0, 1e-15);
}

TEST(RobotFrame, PerpendicularMapsToY) {
  SceneState s;
  s.robot = agent({1, -1}, {4, 3});
  const Vec2 u = normalized(s.robot.goal - s.robot.position);
  s.humans.push_back(agent(s.robot.position + Vec2{-u.y, u.x}));
  const auto f = sim::to_robot_frame(s);
  EXPECT_NEAR(f.humans[0].position.x, 0.0, 1e-12);
  EXPECT_NEAR(f.humans[0].position.y, 1.0, 1e-12);
}

TEST(RobotFrame, DegenerateOnGoal) {
  SceneState s;
  s.robot = agent({1, 1}, {1, 1});
  EXPECT_THROW(sim::to_robot_frame(s), sim::DegenerateFrame);
  s.robot.goal = {1 + 5e-10, 1};
  EXPECT_THROW(sim::to_robot_frame(s), sim::DegenerateFrame);
  s.robot.heading = 0.5;
  EXPECT_NO_THROW(sim::to_robot_frame(s, true));
}

TEST(RobotFrame, PreservesDistances) {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    const auto s = random_scene(rng, 6);
    const auto f = sim::to_robot_frame(s);
    std::vector<Vec2> a{s.robot.position}, b{f.robot.position};
    for (std::size_t i = 0; i < s.humans.size(); ++i) {
      a.push_back(s.humans[i].position);
      a.push_back(s.humans[i].goal);
      b.push_back(f.humans[i].position);
      b.push_back(f.humans[i].goal);
    }
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = i + 1; j < a.size(); ++j) {
        const double d0 = (a[i] - a[j]).norm(), d1 = (b[i] - b[j]).norm();
        EXPECT_LE(std::fabs(d0 - d1), 1e-9 * std::max(1.0, d0));
      }
    for (std::size_t i = 0; i < s.humans.size(); ++i)
      EXPECT_NEAR(s.humans[i].velocity.norm(), f.humans[i].velocity.norm(), 1e-12);
  }
}

TEST(RobotFrame, AlignedSceneUnchanged) {
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    auto s = random_scene(rng, 4);
    s.robot.position = {0, 0};
    s.robot.goal = {uniform(rng, 0.5, 8), 0};
    const auto f = sim::to_robot_frame(s);
    for (std::size_t i = 0; i < s.humans.size(); ++i) {
      EXPECT_NEAR(f.humans[i].position.x, s.humans[i].position.x, 1e-12);
      EXPECT_NEAR(f.humans[i].position.y, s.humans[i].position.y, 1e-12);
      EXPECT_NEAR(f.humans[i].velocity.x, s.humans[i].velocity.x, 1e-12);
      EXPECT_NEAR(f.humans[i].velocity.y, s.humans[i].velocity.y, 1e-12);
    }
  }
}

TEST(Collision, Overlap) {
  SceneState s;
  s.robot = agent({0, 0});
  s.humans.push_back(agent({0.5, 0}));
  const auto r = sim::detect_collision(s);
  ASSERT_TRUE(r.collision.has_value());
  EXPECT_EQ(r.collision->human_index, 0u);
  EXPECT_NEAR(r.collision->depth, 0.1, 1e-12);
}

TEST(Collision, Clear) {
  SceneState s;
  s.robot = agent({0, 0});
  s.humans.push_back(agent({0.7, 0}));
  const auto r = sim::detect_collision(s);
  EXPECT_FALSE(r.collision.has_value());
  EXPECT_NEAR(r.d_min, 0.1, 1e-12);
}

TEST(Collision, EmptyCrowd) {
  SceneState s;
  s.robot = agent({0, 0});
  const auto r = sim::detect_collision(s);
  EXPECT_FALSE(r.collision.has_value());
  EXPECT_EQ(r.d_min, kInf);
}

TEST(Collision, SymmetricUnderReordering) {
  Rng rng(17);
  for (int k = 0; k < 200; ++k) {
    auto s = random_scene(rng, 5);
    for (auto& h : s.humans) h.position = s.robot.position + Vec2{uniform(rng, -1, 1), uniform(rng, -1, 1)};
    std::vector<std::size_t> perm(s.humans.size());
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm.begin(), perm.end(), rng);
    auto p = s;
    for (std::size_t i = 0; i < perm.size(); ++i) p.humans[i] = s.humans[perm[i]];
    const auto a = sim::detect_collision(s), b = sim::detect_collision(p);
    EXPECT_EQ(a.d_min, b.d_min);
    ASSERT_EQ(a.collision.has_value(), b.collision.has_value());
    if (a.collision) {
      EXPECT_EQ(a.collision->depth, b.collision->depth);
      EXPECT_EQ(perm[b.collision->human_index], a.collision->human_index);
    }
  }
}

TEST(Goal, Tolerance) {
  SceneState s;
  s.robot = agent({0, 0}, {0, 0});
  EXPECT_TRUE(sim::reached_goal(s, 0.3));
  s.robot.goal = {0.29, 0};
  EXPECT_TRUE(sim::reached_goal(s, 0.3));
  s.robot.goal = {0.31, 0};
  EXPECT_FALSE(sim::reached_goal(s, 0.3));
  EXPECT_THROW(sim::reached_goal(s, 0.0), InvalidArgument);
}

TEST(Reward, GoalCollisionDiscomfort) {
  SceneState s;
  s.robot = agent({0, 0}, {0.1, 0});
  auto r = policy::reward(s, s, 0.25);
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_TRUE(r.terminal);

  s.robot.goal = {5, 0};
  s.humans.push_back(agent({0.5, 0}));
  r = policy::reward(s, s, 0.25);
  EXPECT_EQ(r.reward, -0.25);
  EXPECT_EQ(r.status, policy::StepStatus::Collision);

  s.humans[0].position = {0.7, 0};
  r = policy::reward(s, s, 0.25);
  EXPECT_NEAR(r.reward, -0.1 + 0.1 / 2, 1e-12);
  EXPECT_FALSE(r.terminal);

  s.humans[0].position = {1.5, 0};
  s.time = 30;
  r = policy::reward(s, s, 0.25, 30);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(r.status, policy::StepStatus::Timeout);
}
