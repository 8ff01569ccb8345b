// Copyright 2026 The Trialworks Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef TRIALWORKS_ARENA_H
#define TRIALWORKS_ARENA_H

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "trialworks/protocol.h"

namespace tw::arena {

inline constexpr std::string_view IMPLEMENTATION = "quack_arena_v1";
inline const ParticipantId ENV_PARTICIPANT{ParticipantKind::environment, "env"};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
  bool operator==(const Vec2&) const = default;
};

// Unit heading for orientation `theta`.
inline Vec2 heading(double theta) { return {std::cos(theta), std::sin(theta)}; }
// Expresses world vector `v` in a frame whose +x axis points along `theta`.
inline Vec2 to_local(Vec2 v, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {v.x * c + v.y * s, -v.x * s + v.y * c};
}
// Wraps into [-pi, pi).
double wrap_angle(double theta);

struct ArenaConfig {
  double arena_size = 100.0;
  std::vector<int> teams{1, 1};
  double player_radius = 2.5;
  double ball_radius = 0.5;
  double shot_velocity = 100.0 / 60.0;
  int shot_cooldown = 10;
  double move_speed = 100.0 / 200.0;
  double turn_speed = 0.1;
  double fov_half_angle = std::numbers::pi / 3.0;
  double fov_range = 50.0;
  std::uint64_t max_tick = 600;
  std::uint64_t seed = 0;

  // Throws InitError.
  void validate() const;
  int player_count() const;
};

// Reads ArenaConfig fields by name. Size-derived defaults follow the given arena_size.
ArenaConfig config_from_json(const Json& json, std::uint64_t default_max_tick = 600, std::uint64_t default_seed = 0);
Json config_to_json(const ArenaConfig& config);

struct PlayerState {
  std::string name;
  int team = 0;
  Vec2 position;
  double theta = 0.0;
  Vec2 velocity;
  bool alive = true;
  int cooldown = 0;
  // Players not on this team at trial start.
  int opponents_at_start = 0;
};

struct Projectile {
  std::string owner;
  int owner_team = 0;
  Vec2 position;
  Vec2 velocity;
};

struct ArenaState {
  ArenaConfig config;
  std::vector<PlayerState> players;
  std::vector<Projectile> projectiles;
  // Number of completed steps.
  std::uint64_t tick = 0;

  int find_player(std::string_view name) const;
  int alive_team_count() const;
};

struct ArenaAction {
  bool fire = false;
  double strafe = 0.0;
  double forward = 0.0;
  double rotate = 0.0;

  bool operator==(const ArenaAction&) const = default;
};

Json action_to_json(const ArenaAction& action);
// Validates against the arena_action schema first.
ArenaAction action_from_json(const Json& json);

struct VisiblePlayer {
  int index = 0;
  Vec2 relative_position;
  double relative_theta = 0.0;
  bool opponent = false;
  bool alive = true;
};

struct VisibleProjectile {
  int index = 0;
  Vec2 relative_position;
  Vec2 relative_velocity;
};

struct Visibility {
  std::vector<VisiblePlayer> players;
  std::vector<VisibleProjectile> projectiles;
};

// Inclusive range and cone test, coordinates in the player's frame (self at origin, heading +x).
// Empty for a dead player.
Visibility compute_visibility(const ArenaState& state, int player);

Json observe(const ArenaState& state, int player);
Json world_state(const ArenaState& state);

// Seeded placement with pairwise spacing of at least four player radii. Players are assigned
// to teams in order of `config.teams`. Throws InitError.
ArenaState arena_init(const ArenaConfig& config, const std::vector<std::string>& player_names);

struct Elimination {
  std::string victim;
  std::string shooter;
};

struct StepResult {
  // One reward per player that earned anything this tick: the sum of its time penalty,
  // termination penalty and on-target rewards.
  std::vector<Reward> rewards;
  std::vector<Elimination> eliminations;
  bool terminal = false;
};

// Advances one tick. Living players without an entry in `actions` do nothing.
StepResult arena_step(ArenaState& state, const std::map<std::string, ArenaAction>& actions);

}  // namespace tw::arena

#endif
