#include "modalcompose/env.hpp"

#include <algorithm>
#include <cmath>

#include "modalcompose/errors.hpp"

namespace modalcompose {

namespace {

double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

Vec2 sample_in(const Box& b, Rng& rng) { return {rng.uniform(b.x_lo, b.x_hi), rng.uniform(b.y_lo, b.y_hi)}; }

Box left_third(const Box& arena) {
  return {arena.x_lo, arena.x_lo + (arena.x_hi - arena.x_lo) / 3.0, arena.y_lo, arena.y_hi};
}

// Unit vector from `from` to `to`; zero when they coincide.
Vec2 direction(const Vec2& from, const Vec2& to) {
  const double d = distance(from, to);
  if (d < 1e-12) return {0.0, 0.0};
  return {(to[0] - from[0]) / d, (to[1] - from[1]) / d};
}

}  // namespace

EnvKind parse_env_kind(std::string_view token) {
  if (token == "occluded_reach") return EnvKind::occluded_reach;
  if (token == "phase_reach") return EnvKind::phase_reach;
  throw ConfigError("unknown environment '" + std::string(token) + "' (expected occluded_reach or phase_reach)");
}

std::string_view to_string(EnvKind kind) noexcept {
  return kind == EnvKind::occluded_reach ? "occluded_reach" : "phase_reach";
}

Vec2 Box::clip(const Vec2& p) const noexcept { return {std::clamp(p[0], x_lo, x_hi), std::clamp(p[1], y_lo, y_hi)}; }

EnvSpec EnvSpec::defaults(EnvKind kind) {
  EnvSpec s;
  s.kind = kind;
  return s;
}

void EnvSpec::validate() const {
  if (!(arena.x_lo < arena.x_hi && arena.y_lo < arena.y_hi)) throw ConfigError("arena bounds are empty");
  if (!(occlusion.x_lo < occlusion.x_hi && occlusion.y_lo < occlusion.y_hi)) {
    throw ConfigError("occlusion box bounds are empty");
  }
  if (!arena.contains(occlusion)) throw ConfigError("occlusion box must lie inside the arena");
  if (!(success_radius > 0.0 && success_radius <= contact_radius)) {
    throw ConfigError("need 0 < success_radius <= contact_radius");
  }
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (!(max_speed > 0.0)) throw ConfigError("max_speed must be positive");
  if (expert_noise < 0.0 || approach_offset < 0.0) throw ConfigError("expert_noise and approach_offset must be >= 0");
}

std::vector<ModalityInfo> EnvSpec::modalities() const {
  if (kind == EnvKind::occluded_reach) return {{"vis", 5}, {"tac", 3}};
  return {{"wp1", 3}, {"wp2", 3}};
}

Observation observe(const EnvSpec& spec, const EnvState& s) {
  Observation obs;
  obs.robot_state = {s.agent[0], s.agent[1]};
  if (spec.kind == EnvKind::occluded_reach) {
    const bool occluded = spec.occlusion.contains(s.agent);
    std::vector<double> vis{s.agent[0], s.agent[1], 0.0, 0.0, occluded ? 1.0 : 0.0};
    if (!occluded) {
      vis[2] = s.target[0];
      vis[3] = s.target[1];
    }
    std::vector<double> tac{0.0, 0.0, 0.0};
    if (distance(s.agent, s.target) <= spec.contact_radius) {
      tac = {1.0, s.target[0] - s.agent[0], s.target[1] - s.agent[1]};
    }
    obs.modalities.emplace_back("vis", std::move(vis));
    obs.modalities.emplace_back("tac", std::move(tac));
  } else {
    const double flag = s.stage >= 1 ? 1.0 : 0.0;
    obs.modalities.emplace_back("wp1", std::vector<double>{s.target[0], s.target[1], flag});
    obs.modalities.emplace_back("wp2", std::vector<double>{s.waypoint2[0], s.waypoint2[1], flag});
  }
  return obs;
}

EnvReset env_reset(const EnvSpec& spec, Rng& rng) {
  spec.validate();
  EnvState s;
  s.agent = sample_in(left_third(spec.arena), rng);
  if (spec.kind == EnvKind::occluded_reach) {
    s.target = sample_in(spec.occlusion, rng);
    s.approach_side = approach_side_for(spec, s.agent, s.target);
  } else {
    const double w = spec.arena.x_hi - spec.arena.x_lo;
    const Box middle{spec.arena.x_lo + w / 3.0, spec.arena.x_lo + w / 2.0, spec.arena.y_lo * 0.8, spec.arena.y_hi * 0.8};
    const Box right{spec.arena.x_lo + 2.0 * w / 3.0, spec.arena.x_hi * 0.9, spec.arena.y_lo * 0.8,
                    spec.arena.y_hi * 0.8};
    s.target = sample_in(middle, rng);
    s.waypoint2 = sample_in(right, rng);
  }
  return {s, observe(spec, s)};
}

Transition env_step(const EnvSpec& spec, const EnvState& state, std::span<const double> action) {
  if (action.size() != spec.action_dim()) throw ContractError("env_step: action must have 2 components");
  for (double a : action) {
    if (!std::isfinite(a)) throw ContractError("env_step: non-finite action");
  }
  if (state.done) throw ContractError("env_step: episode already finished");
  EnvState s = state;
  const double ax = std::clamp(action[0], -1.0, 1.0);
  const double ay = std::clamp(action[1], -1.0, 1.0);
  s.agent = spec.arena.clip({s.agent[0] + spec.max_speed * ax, s.agent[1] + spec.max_speed * ay});
  s.t += 1;
  if (spec.kind == EnvKind::occluded_reach) {
    s.success = distance(s.agent, s.target) <= spec.success_radius;
  } else {
    if (s.stage == 0 && distance(s.agent, s.target) <= spec.success_radius) s.stage = 1;
    s.success = s.stage == 1 && distance(s.agent, s.waypoint2) <= spec.success_radius;
  }
  s.done = s.success || s.t >= spec.max_steps;
  return {s, observe(spec, s), s.done, s.success};
}

// The side the agent starts on, unless that entry point would fall outside the
// box.
int approach_side_for(const EnvSpec& spec, const Vec2& agent, const Vec2& target) {
  int side = agent[1] >= target[1] ? 1 : -1;
  const double y = target[1] + side * spec.approach_offset;
  if (y > spec.occlusion.y_hi || y < spec.occlusion.y_lo) side = -side;
  return side;
}

Vec2 approach_point(const EnvState& state, const EnvSpec& spec) {
  const Box& box = spec.occlusion;
  const double y = state.target[1] + state.approach_side * spec.approach_offset;
  return {box.x_lo, std::clamp(y, box.y_lo, box.y_hi)};
}

std::vector<double> scripted_expert(const EnvState& state, const EnvSpec& spec, Rng& rng) {
  Vec2 dir;
  if (spec.kind == EnvKind::occluded_reach) {
    // Outside the box: head for the entry point. Inside without contact: sweep
    // along +x. In contact: home in on the target.
    if (!spec.occlusion.contains(state.agent)) {
      const Vec2 entry = approach_point(state, spec);
      dir = direction(state.agent, distance(state.agent, entry) < 1e-12 ? state.target : entry);
    } else if (distance(state.agent, state.target) <= spec.contact_radius) {
      dir = direction(state.agent, state.target);
    } else {
      dir = {1.0, 0.0};
    }
  } else {
    dir = direction(state.agent, state.stage == 0 ? state.target : state.waypoint2);
  }
  std::vector<double> a{dir[0], dir[1]};
  if (spec.expert_noise > 0.0) {
    for (auto& v : a) v = std::clamp(v + spec.expert_noise * rng.normal(), -1.0, 1.0);
  }
  return a;
}

}  // namespace modalcompose
