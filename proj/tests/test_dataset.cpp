#include <gtest/gtest.h>

#include <map>

#include "gazenav/dataset.hpp"

using namespace gazenav;
using namespace gazenav::dataset;

namespace {

ReplayScene two_point_track() { return parse_trajectory_file("# rate 10\n0 1 0.0 0.0\n10 1 1.0 0.0\n"); }

std::string random_file(Rng& rng, int peds, int frames) {
  std::string text = "# rate 2.5\n# generated\n";
  char buf[96];
  for (int f = 0; f < frames; ++f)
    for (int p = 0; p < peds; ++p) {
      if (uniform01(rng) < 0.3) continue;
      std::snprintf(buf, sizeof buf, "%d %d %.6f %.6f\n", f * 10, p, uniform(rng, -20, 20), uniform(rng, -20, 20));
      text += buf;
    }
  return text;
}

}  // namespace

TEST(Parse, TwoLines) {
  const auto s = two_point_track();
  ASSERT_EQ(s.tracks.size(), 1u);
  EXPECT_EQ(s.tracks.at(1).size(), 2u);
  EXPECT_DOUBLE_EQ(s.frame_rate, 10.0);
  EXPECT_DOUBLE_EQ(s.bounds.lo.x, 0.0);
  EXPECT_DOUBLE_EQ(s.bounds.hi.x, 1.0);
}

TEST(Parse, MalformedFieldCarriesLine) {
  try {
    parse_trajectory_file("# rate 10\n0 1 0.0 0.0\n0 2 abc 0.0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Parse, DecreasingFramesNamePed) {
  try {
    parse_trajectory_file("# rate 10\n5 7 0 0\n3 7 1 1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("ped_id 7"), std::string::npos);
  }
}

TEST(Parse, EmptyAndMissingRate) {
  EXPECT_THROW(parse_trajectory_file("# rate 10\n# nothing\n"), EmptyScene);
  EXPECT_THROW(parse_trajectory_file("0 1 0 0\n"), ParseError);
  EXPECT_THROW(parse_trajectory_file("# rate -1\n0 1 0 0\n"), ParseError);
  EXPECT_THROW(parse_trajectory_file("# rate 10\n0 1 0\n"), ParseError);
}

TEST(Parse, InterleavedTracksSorted) {
  const auto s = parse_trajectory_file("# rate 10\n0 2 5 5\n0 1 0 0\n10 1 1 0\n10 2 4 5\n");
  ASSERT_EQ(s.tracks.size(), 2u);
  EXPECT_EQ(s.tracks.at(2).back().frame, 10);
  EXPECT_DOUBLE_EQ(s.bounds.hi.y, 5.0);
}

TEST(Parse, RoundTrip) {
  Rng rng(42);
  for (int k = 0; k < 20; ++k) {
    const auto a = parse_trajectory_file(random_file(rng, 6, 30));
    const auto b = parse_trajectory_file(write_trajectory_file(a));
    ASSERT_EQ(a.tracks.size(), b.tracks.size());
    EXPECT_DOUBLE_EQ(a.frame_rate, b.frame_rate);
    for (const auto& [id, t] : a.tracks) {
      const auto& u = b.tracks.at(id);
      ASSERT_EQ(t.size(), u.size());
      for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(t[i].frame, u[i].frame);
        EXPECT_LE((t[i].position - u[i].position).norm(), 1e-6);
      }
    }
  }
}

TEST(HumansAtTime, Midpoint) {
  const auto h = humans_at_time(two_point_track(), 0.5);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_NEAR(h[0].position.x, 0.5, 1e-12);
  EXPECT_NEAR(h[0].velocity.x, 1.0, 1e-12);
  EXPECT_NEAR(h[0].velocity.y, 0.0, 1e-12);
}

TEST(HumansAtTime, OutsideSpanAbsent) {
  const auto s = parse_trajectory_file("# rate 10\n5 1 0 0\n15 1 1 0\n");
  EXPECT_TRUE(humans_at_time(s, 0.2).empty());
  EXPECT_TRUE(humans_at_time(s, 1.6).empty());
  EXPECT_EQ(humans_at_time(s, 1.5).size(), 1u);
}

TEST(HumansAtTime, ExactFrame) {
  const auto s = parse_trajectory_file("# rate 10\n0 1 0 0\n10 1 1 2\n20 1 3 2\n");
  const auto h = humans_at_time(s, 1.0);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_DOUBLE_EQ(h[0].position.x, 1.0);
  EXPECT_DOUBLE_EQ(h[0].position.y, 2.0);
}

TEST(HumansAtTime, OrderedByPedId) {
  const auto s = parse_trajectory_file("# rate 1\n0 9 9 0\n0 3 3 0\n1 9 9 1\n1 3 3 1\n");
  const auto h = humans_at_time(s, 0.5);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_DOUBLE_EQ(h[0].position.x, 3.0);
  EXPECT_DOUBLE_EQ(h[1].position.x, 9.0);
}

TEST(HumansAtTime, ContinuousAtFrames) {
  Rng rng(8);
  const auto s = parse_trajectory_file(random_file(rng, 4, 25));
  for (const auto& [id, t] : s.tracks) {
    ReplayScene one = s;
    one.tracks = {{id, t}};
    for (std::size_t i = 1; i + 1 < t.size(); ++i) {
      const double tf = t[i].frame / s.frame_rate;
      const auto before = humans_at_time(one, tf - 1e-9);
      const auto after = humans_at_time(one, tf + 1e-9);
      ASSERT_EQ(before.size(), 1u);
      ASSERT_EQ(after.size(), 1u);
      EXPECT_LE((before[0].position - after[0].position).norm(), 1e-6);
    }
  }
}

TEST(HumansAtTime, SpeedBoundedByRawTrack) {
  Rng rng(9);
  const auto s = parse_trajectory_file(random_file(rng, 5, 30));
  double vmax = 0.0;
  for (const auto& [id, t] : s.tracks)
    for (std::size_t i = 1; i < t.size(); ++i)
      vmax = std::max(vmax, (t[i].position - t[i - 1].position).norm() * s.frame_rate / (t[i].frame - t[i - 1].frame));
  for (double time = 0.0; time < s.duration(); time += 0.173)
    for (const auto& h : humans_at_time(s, time)) EXPECT_LE(h.velocity.norm(), vmax + 1e-9);
}

TEST(CircleCrossing, RobotOnly) {
  const auto c = make_circle_crossing(0, 4.0, 1);
  EXPECT_TRUE(c.initial.humans.empty());
  EXPECT_DOUBLE_EQ(c.initial.robot.position.y, -4.0);
  EXPECT_DOUBLE_EQ(c.initial.robot.goal.y, 4.0);
}

TEST(CircleCrossing, Deterministic) {
  const auto a = make_circle_crossing(5, 4.0, 77), b = make_circle_crossing(5, 4.0, 77);
  for (std::size_t i = 0; i < a.initial.humans.size(); ++i) {
    EXPECT_EQ(a.initial.humans[i].position.x, b.initial.humans[i].position.x);
    EXPECT_EQ(a.initial.humans[i].position.y, b.initial.humans[i].position.y);
  }
}

TEST(CircleCrossing, NoInitialOverlap) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto c = make_circle_crossing(5, 4.0, seed);
    const auto& h = c.initial.humans;
    ASSERT_EQ(h.size(), 5u);
    for (std::size_t i = 0; i < h.size(); ++i) {
      EXPECT_NEAR(h[i].position.norm(), 4.0, 1e-12);
      EXPECT_NEAR((h[i].goal + h[i].position).norm(), 0.0, 1e-12);
      for (std::size_t j = i + 1; j < h.size(); ++j) EXPECT_GT((h[i].position - h[j].position).norm(), 0.6);
    }
  }
}

TEST(CircleCrossing, PlacementFailureWhenCrowded) {
  EXPECT_THROW(make_circle_crossing(200, 1.0, 3), PlacementFailure);
}

TEST(StartFrame, SingleFrame) {
  const auto s = parse_trajectory_file("# rate 10\n4 1 0 0\n4 2 1 1\n");
  Rng rng(1);
  EXPECT_EQ(random_start_frame(s, rng), 4);
}

TEST(StartFrame, Reproducible) {
  Rng g(5);
  const auto s = parse_trajectory_file(random_file(g, 3, 400));
  Rng a(10), b(10);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(random_start_frame(s, a, 5.0), random_start_frame(s, b, 5.0));
}

TEST(StartFrame, RoughlyUniform) {
  std::string text = "# rate 1\n";
  for (int f = 0; f < 50; ++f) text += std::to_string(f) + " 1 " + std::to_string(f) + " 0\n";
  const auto s = parse_trajectory_file(text);
  Rng rng(99);
  std::map<int, int> counts;
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) ++counts[random_start_frame(s, rng, 30.0)];
  // frames 0..19 keep 30 s of footage
  ASSERT_EQ(counts.size(), 20u);
  double chi2 = 0.0;
  const double expect = draws / 20.0;
  for (const auto& [f, c] : counts) {
    EXPECT_LE(f, 19);
    chi2 += (c - expect) * (c - expect) / expect;
  }
  EXPECT_LT(chi2, 43.82);  // chi-square, 19 dof, p = 0.001
}

TEST(Mirror, FlipsY) {
  const auto m = mirror_scene(parse_trajectory_file("# rate 1\n0 1 1 2\n1 1 2 3\n"));
  EXPECT_DOUBLE_EQ(m.tracks.at(1)[1].position.y, -3.0);
  EXPECT_DOUBLE_EQ(m.bounds.lo.y, -3.0);
}

TEST(ScenarioConfigText, RoundTripAndErrors) {
  ScenarioConfig c;
  c.n_humans = 7;
  c.time_limit = 22.5;
  c.robot_visible = false;
  const auto back = parse_scenario_config(write_scenario_config(c));
  EXPECT_EQ(back.n_humans, 7);
  EXPECT_DOUBLE_EQ(back.time_limit, 22.5);
  EXPECT_FALSE(back.robot_visible);
  try {
    parse_scenario_config("n_humans = 3\nbogus = 1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_scenario_config("time_limit = 0\n"), InvalidArgument);
}
