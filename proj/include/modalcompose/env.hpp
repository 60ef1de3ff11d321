#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modalcompose/observation.hpp"
#include "modalcompose/rng.hpp"

namespace modalcompose {

enum class EnvKind { occluded_reach, phase_reach };

EnvKind parse_env_kind(std::string_view token);
std::string_view to_string(EnvKind kind) noexcept;

using Vec2 = std::array<double, 2>;

struct Box {
  double x_lo = -1.0, x_hi = 1.0, y_lo = -1.0, y_hi = 1.0;

  bool contains(const Vec2& p) const noexcept { return p[0] >= x_lo && p[0] <= x_hi && p[1] >= y_lo && p[1] <= y_hi; }
  bool contains(const Box& b) const noexcept {
    return b.x_lo >= x_lo && b.x_hi <= x_hi && b.y_lo >= y_lo && b.y_hi <= y_hi;
  }
  Vec2 clip(const Vec2& p) const noexcept;
};

/// Point-mass reaching tasks in which the informative modality changes with
/// the phase of the episode.
///
/// occluded_reach: the target sits inside an occlusion box. The "vis" stream
/// reports the target only while the agent is outside the box; the "tac"
/// stream reports the offset to the target only within `contact_radius`.
/// The demonstrator enters the box through its left edge `approach_offset`
/// above or below the target row (the side the agent starts on), sweeps along
/// +x until contact, then homes in. The sweep passes the target outside the
/// success radius, so the last stretch can only be resolved by contact.
///
/// phase_reach: two waypoints to visit in order. "wp1" observes the first,
/// "wp2" the second; both carry the flag telling whether the first was reached.
struct EnvSpec {
  EnvKind kind = EnvKind::occluded_reach;
  Box arena{};
  Box occlusion{0.3, 0.9, -0.3, 0.3};
  double contact_radius = 0.15;
  double success_radius = 0.05;
  int max_steps = 80;
  double max_speed = 0.08;
  double expert_noise = 0.02;
  double approach_offset = 0.1;

  static EnvSpec defaults(EnvKind kind);
  void validate() const;
  std::string name() const { return std::string(to_string(kind)); }
  std::vector<ModalityInfo> modalities() const;
  std::size_t robot_state_dim() const noexcept { return 2; }
  std::size_t action_dim() const noexcept { return 2; }
};

struct EnvState {
  Vec2 agent{};
  Vec2 target{};     // occluded_reach target, phase_reach first waypoint
  Vec2 waypoint2{};  // phase_reach only
  int approach_side = 1;
  int stage = 0;  // phase_reach: 1 once the first waypoint was reached
  int t = 0;
  bool done = false;
  bool success = false;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct EnvReset {
  EnvState state;
  Observation obs;
};

struct Transition {
  EnvState state;
  Observation obs;
  bool done = false;
  bool success = false;
};

EnvReset env_reset(const EnvSpec& spec, Rng& rng);
// `action` is in [-1, 1]^2 (values beyond are clipped); velocity = max_speed * action.
Transition env_step(const EnvSpec& spec, const EnvState& state, std::span<const double> action);
Observation observe(const EnvSpec& spec, const EnvState& state);

// Demonstrator with full state access. Returns an action in [-1, 1]^2.
std::vector<double> scripted_expert(const EnvState& state, const EnvSpec& spec, Rng& rng);

// Side (+1 above, -1 below) of the target row the demonstrator enters on.
int approach_side_for(const EnvSpec& spec, const Vec2& agent, const Vec2& target);
// Point where the demonstrator enters the occlusion box.
Vec2 approach_point(const EnvState& state, const EnvSpec& spec);

}  // namespace modalcompose
