#pragma once

// Optimal Reciprocal Collision Avoidance for disc agents.
//
// Each neighbor contributes one half-plane in velocity space; the new velocity is
// the point of the intersection (clipped to the v_pref disc) closest to the
// preferred velocity. When the program is infeasible, the velocity minimizing the
// largest constraint violation is returned instead.

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <vector>

#include "gazenav/common.hpp"
#include "gazenav/sim.hpp"

namespace gazenav::orca {

inline constexpr double kLpEpsilon = 1e-9;

struct OrcaParams {
  double time_horizon = 5.0;
  double neighbor_dist = 10.0;
  int max_neighbors = 10;
  double dt = sim::kDefaultDt;
  double safety_buffer = 0.01;
  // Agents in simulate_crowd_step whose solved speed falls below stall_ratio of
  // their preferred speed re-solve with a fixed per-agent nudge (direction hashed
  // from the goal, magnitude tie_break * v_pref). Breaks symmetric freezes
  // without depending on agent order. tie_break = 0 disables it.
  double tie_break = 0.7;
  double stall_ratio = 0.5;

  bool valid() const {
    return time_horizon > 0.0 && neighbor_dist > 0.0 && max_neighbors >= 0 && dt > 0.0 &&
           safety_buffer >= 0.0;
  }
};

// Feasible side is {v : dot(v - point, normal) >= 0}.
struct HalfPlane {
  Vec2 point;
  Vec2 normal;

  // Direction along the boundary with the feasible side on its left.
  Vec2 direction() const { return {normal.y, -normal.x}; }
  static HalfPlane from_direction(const Vec2& point, const Vec2& direction) {
    return {point, {-direction.y, direction.x}};
  }
  double violation(const Vec2& v) const { return -dot(v - point, normal); }
};

namespace detail {

// Optimizes along the boundary of `planes[index]` subject to the earlier planes.
inline bool solve_on_line(const std::vector<HalfPlane>& planes, std::size_t index, double radius,
                          const Vec2& target, bool direction_opt, Vec2& result) {
  const Vec2 p = planes[index].point;
  const Vec2 d = planes[index].direction();
  const double dp = dot(p, d);
  const double discriminant = dp * dp + radius * radius - p.squared_norm();
  if (discriminant < 0.0) return false;  // boundary misses the speed disc
  const double root = std::sqrt(discriminant);
  double t_left = -dp - root;
  double t_right = -dp + root;

  for (std::size_t i = 0; i < index; ++i) {
    const Vec2 di = planes[i].direction();
    const double denominator = det(d, di);
    const double numerator = det(di, p - planes[i].point);
    if (std::fabs(denominator) <= kLpEpsilon) {
      if (numerator < 0.0) return false;
      continue;
    }
    const double t = numerator / denominator;
    if (denominator >= 0.0)
      t_right = std::min(t_right, t);
    else
      t_left = std::max(t_left, t);
    if (t_left > t_right) return false;
  }

  if (direction_opt) {
    result = dot(target, d) > 0.0 ? p + d * t_right : p + d * t_left;
  } else {
    const double t = dot(d, target - p);
    result = p + d * std::clamp(t, t_left, t_right);
  }
  return true;
}

// Returns planes.size() on success, otherwise the index of the first plane that failed.
inline std::size_t solve_2d(const std::vector<HalfPlane>& planes, double radius, const Vec2& target,
                            bool direction_opt, Vec2& result) {
  if (direction_opt)
    result = target * radius;
  else if (target.squared_norm() > radius * radius)
    result = normalized(target) * radius;
  else
    result = target;

  for (std::size_t i = 0; i < planes.size(); ++i) {
    if (planes[i].violation(result) > 0.0) {
      const Vec2 previous = result;
      if (!solve_on_line(planes, i, radius, target, direction_opt, result)) {
        result = previous;
        return i;
      }
    }
  }
  return planes.size();
}

// Lifted fallback: minimize the maximum violation over planes [begin, end).
inline void solve_min_violation(const std::vector<HalfPlane>& planes, std::size_t begin,
                                double radius, Vec2& result) {
  double distance = 0.0;
  for (std::size_t i = begin; i < planes.size(); ++i) {
    if (planes[i].violation(result) <= distance) continue;
    const Vec2 di = planes[i].direction();
    std::vector<HalfPlane> projected;
    projected.reserve(i);
    for (std::size_t j = 0; j < i; ++j) {
      const Vec2 dj = planes[j].direction();
      const double determinant = det(di, dj);
      Vec2 point;
      if (std::fabs(determinant) <= kLpEpsilon) {
        if (dot(di, dj) > 0.0) continue;  // same direction
        point = (planes[i].point + planes[j].point) * 0.5;
      } else {
        point = planes[i].point + di * (det(dj, planes[i].point - planes[j].point) / determinant);
      }
      projected.push_back(HalfPlane::from_direction(point, normalized(dj - di)));
    }
    const Vec2 previous = result;
    if (solve_2d(projected, radius, Vec2{-di.y, di.x}, true, result) < projected.size())
      result = previous;  // numerical corner case; keep the last feasible point
    distance = planes[i].violation(result);
  }
}

}  // namespace detail

inline Vec2 preferred_velocity(const sim::AgentState& self, double dt) {
  const Vec2 to_goal = self.goal - self.position;
  const double dist = to_goal.norm();
  if (dist <= 0.0) return {};
  return to_goal / dist * std::min(self.v_pref, dist / dt);
}

// Reciprocal constraint induced by `other` on `self`.
inline HalfPlane reciprocal_half_plane(const sim::AgentState& self, const sim::AgentState& other,
                                       const OrcaParams& params) {
  const Vec2 rel_pos = other.position - self.position;
  const Vec2 rel_vel = self.velocity - other.velocity;
  const double dist_sq = rel_pos.squared_norm();
  const double r = self.radius + other.radius + params.safety_buffer;
  const double r_sq = r * r;
  const double inv_tau = 1.0 / params.time_horizon;

  Vec2 direction;
  Vec2 u;
  if (dist_sq > r_sq) {
    const Vec2 w = rel_vel - rel_pos * inv_tau;
    const double w_len_sq = w.squared_norm();
    const double dp1 = dot(w, rel_pos);
    if (dp1 < 0.0 && dp1 * dp1 > r_sq * w_len_sq) {
      // Project on the cut-off circle.
      const double w_len = std::sqrt(w_len_sq);
      const Vec2 unit_w = w / w_len;
      direction = {unit_w.y, -unit_w.x};
      u = unit_w * (r * inv_tau - w_len);
    } else {
      // Project on a leg of the cone.
      const double leg = std::sqrt(dist_sq - r_sq);
      if (det(rel_pos, w) > 0.0) {
        direction = Vec2{rel_pos.x * leg - rel_pos.y * r, rel_pos.x * r + rel_pos.y * leg} / dist_sq;
      } else {
        direction =
            -(Vec2{rel_pos.x * leg + rel_pos.y * r, -rel_pos.x * r + rel_pos.y * leg} / dist_sq);
      }
      u = direction * dot(rel_vel, direction) - rel_vel;
    }
  } else {
    // Already overlapping: resolve within one time step.
    const double inv_dt = 1.0 / params.dt;
    const Vec2 w = rel_vel - rel_pos * inv_dt;
    const double w_len = w.norm();
    const Vec2 unit_w = w_len > 0.0 ? w / w_len : Vec2{1.0, 0.0};
    direction = {unit_w.y, -unit_w.x};
    u = unit_w * (r * inv_dt - w_len);
  }
  return HalfPlane::from_direction(self.velocity + u * 0.5, direction);
}

// Neighbors inside neighbor_dist, nearest first (ties by index), at most max_neighbors.
inline std::vector<std::size_t> select_neighbors(const sim::AgentState& self,
                                                 const std::vector<sim::AgentState>& neighbors,
                                                 const OrcaParams& params) {
  std::vector<std::size_t> idx;
  std::vector<double> dist(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    dist[i] = (neighbors[i].position - self.position).norm();
    if (dist[i] < params.neighbor_dist) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
  });
  if (idx.size() > static_cast<std::size_t>(params.max_neighbors))
    idx.resize(static_cast<std::size_t>(params.max_neighbors));
  return idx;
}

inline std::vector<HalfPlane> orca_constraints(const sim::AgentState& self,
                                               const std::vector<sim::AgentState>& neighbors,
                                               const OrcaParams& params) {
  std::vector<HalfPlane> planes;
  for (std::size_t i : select_neighbors(self, neighbors, params))
    planes.push_back(reciprocal_half_plane(self, neighbors[i], params));
  return planes;
}

inline Vec2 orca_velocity(const sim::AgentState& self, const std::vector<sim::AgentState>& neighbors,
                          const OrcaParams& params, const Vec2& preferred) {
  const auto planes = orca_constraints(self, neighbors, params);
  Vec2 result;
  const std::size_t failed = detail::solve_2d(planes, self.v_pref, preferred, false, result);
  if (failed < planes.size()) detail::solve_min_violation(planes, failed, self.v_pref, result);
  // Guard the speed bound against round-off.
  if (result.norm() > self.v_pref) result = normalized(result) * self.v_pref;
  return result;
}

inline Vec2 orca_velocity(const sim::AgentState& self, const std::vector<sim::AgentState>& neighbors,
                          const OrcaParams& params) {
  return orca_velocity(self, neighbors, params, preferred_velocity(self, params.dt));
}

// One synchronous update of every agent from the same snapshot. Agents within their
// own radius of the goal stop pursuing it but still yield to others. `passive`
// agents are seen as neighbors but not moved.
inline std::vector<sim::AgentState> simulate_crowd_step(const std::vector<sim::AgentState>& agents,
                                                        const OrcaParams& params,
                                                        const std::vector<sim::AgentState>& passive = {}) {
  std::vector<Vec2> velocities(agents.size());
  std::vector<sim::AgentState> others;
  others.reserve(agents.size() + passive.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    others.clear();
    for (std::size_t j = 0; j < agents.size(); ++j)
      if (j != i) others.push_back(agents[j]);
    others.insert(others.end(), passive.begin(), passive.end());
    const auto& a = agents[i];
    const bool arrived = (a.goal - a.position).norm() < a.radius;
    const Vec2 pref = arrived ? Vec2{} : preferred_velocity(a, params.dt);
    velocities[i] = orca_velocity(a, others, params, pref);
    if (params.tie_break > 0.0 && !arrived && velocities[i].norm() < params.stall_ratio * pref.norm()) {
      Rng rng(derive_seed(std::bit_cast<std::uint64_t>(a.goal.x), std::bit_cast<std::uint64_t>(a.goal.y)));
      const double angle = uniform(rng, 0.0, 2.0 * M_PI);
      const Vec2 nudge = Vec2{std::cos(angle), std::sin(angle)} * (params.tie_break * a.v_pref);
      const Vec2 alt = orca_velocity(a, others, params, pref + nudge);
      double worst = 0.0, worst_alt = 0.0;
      for (const auto& h : orca_constraints(a, others, params)) {
        worst = std::max(worst, h.violation(velocities[i]));
        worst_alt = std::max(worst_alt, h.violation(alt));
      }
      if (worst_alt <= worst + kLpEpsilon) velocities[i] = alt;
    }
  }
  std::vector<sim::AgentState> next = agents;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    next[i].position = agents[i].position + velocities[i] * params.dt;
    next[i].velocity = velocities[i];
    if (velocities[i].norm() > 1e-9) next[i].heading = std::atan2(velocities[i].y, velocities[i].x);
  }
  return next;
}

}  // namespace gazenav::orca
