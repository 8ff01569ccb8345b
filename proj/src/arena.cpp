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

#include "trialworks/arena.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "trialworks/error.h"
#include "trialworks/schema.h"

namespace tw::arena {
namespace {

constexpr double PI = std::numbers::pi;
constexpr double INF = std::numeric_limits<double>::infinity();
constexpr int PLACEMENT_ATTEMPTS = 10000;

// Smallest s in [0, 1] where the segment p + s*v comes within `radius` of `center`.
std::optional<double> segment_circle_hit(Vec2 p, Vec2 v, Vec2 center, double radius) {
  const Vec2 f = p - center;
  const double c = f.dot(f) - radius * radius;
  if (c <= 0.0) {
    return 0.0;
  }
  const double a = v.dot(v);
  if (a == 0.0) {
    return std::nullopt;
  }
  const double b = 2.0 * f.dot(v);
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) {
    return std::nullopt;
  }
  const double s = (-b - std::sqrt(disc)) / (2.0 * a);
  if (s < 0.0 || s > 1.0) {
    return std::nullopt;
  }
  return s;
}

// Parameter along p + s*v at which a ball of radius r touches a wall of the [0, size] square.
double wall_contact(Vec2 p, Vec2 v, double size, double r) {
  const double lo = r;
  const double hi = size - r;
  if (p.x <= lo || p.x >= hi || p.y <= lo || p.y >= hi) {
    return 0.0;
  }
  auto axis = [&](double pos, double vel) {
    if (vel > 0.0) {
      return (hi - pos) / vel;
    }
    if (vel < 0.0) {
      return (lo - pos) / vel;
    }
    return INF;
  };
  return std::min(axis(p.x, v.x), axis(p.y, v.y));
}

double read_number(const Json& json, const char* key, double fallback) {
  auto it = json.find(key);
  if (it == json.end()) {
    return fallback;
  }
  if (!it->is_number()) {
    throw InitError(std::string("arena config field ") + key + " must be a number");
  }
  return it->get<double>();
}

std::uint64_t read_uint(const Json& json, const char* key, std::uint64_t fallback) {
  auto it = json.find(key);
  if (it == json.end()) {
    return fallback;
  }
  if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
    throw InitError(std::string("arena config field ") + key + " must be a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

}  // namespace

double wrap_angle(double theta) {
  double wrapped = theta - 2.0 * PI * std::floor((theta + PI) / (2.0 * PI));
  if (wrapped >= PI) {
    wrapped -= 2.0 * PI;
  }
  return wrapped;
}

void ArenaConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(arena_size)) {
    throw InitError("arena_size must be positive");
  }
  if (!positive(player_radius) || !(arena_size > 4.0 * player_radius)) {
    throw InitError("arena_size must exceed four player radii");
  }
  if (!positive(ball_radius)) {
    throw InitError("ball_radius must be positive");
  }
  if (!positive(shot_velocity) || !positive(move_speed) || !positive(turn_speed) || !positive(fov_range)) {
    throw InitError("speeds and fov_range must be positive");
  }
  if (shot_cooldown < 1) {
    throw InitError("shot_cooldown must be at least 1");
  }
  if (!(fov_half_angle > 0.0 && fov_half_angle <= PI)) {
    throw InitError("fov_half_angle must lie in (0, pi]");
  }
  if (max_tick < 1) {
    throw InitError("max_tick must be positive");
  }
  for (int size : teams) {
    if (size < 1) {
      throw InitError("team sizes must be positive");
    }
  }
  if (player_count() < 2) {
    throw InitError("at least two players are required");
  }
}

int ArenaConfig::player_count() const { return std::accumulate(teams.begin(), teams.end(), 0); }

ArenaConfig config_from_json(const Json& json, std::uint64_t default_max_tick, std::uint64_t default_seed) {
  if (!json.is_object()) {
    throw InitError("arena config must be an object");
  }
  ArenaConfig config;
  const double size = read_number(json, "arena_size", 100.0);
  config.arena_size = size;
  config.player_radius = read_number(json, "player_radius", size / 40.0);
  config.ball_radius = read_number(json, "ball_radius", size / 200.0);
  config.shot_velocity = read_number(json, "shot_velocity", size / 60.0);
  config.shot_cooldown = static_cast<int>(read_uint(json, "shot_cooldown", 10));
  config.move_speed = read_number(json, "move_speed", size / 200.0);
  config.turn_speed = read_number(json, "turn_speed", 0.1);
  config.fov_half_angle = read_number(json, "fov_half_angle", PI / 3.0);
  config.fov_range = read_number(json, "fov_range", size / 2.0);
  config.max_tick = read_uint(json, "max_tick", default_max_tick);
  config.seed = read_uint(json, "seed", default_seed);
  if (auto it = json.find("teams"); it != json.end()) {
    if (!it->is_array()) {
      throw InitError("teams must be a list of team sizes");
    }
    config.teams.clear();
    for (const auto& team : *it) {
      if (!team.is_number_integer()) {
        throw InitError("team sizes must be integers");
      }
      config.teams.push_back(team.get<int>());
    }
  }
  config.validate();
  return config;
}

Json config_to_json(const ArenaConfig& config) {
  return Json{{"arena_size", config.arena_size},     {"teams", config.teams},
              {"player_radius", config.player_radius}, {"ball_radius", config.ball_radius},
              {"shot_velocity", config.shot_velocity}, {"shot_cooldown", config.shot_cooldown},
              {"move_speed", config.move_speed},       {"turn_speed", config.turn_speed},
              {"fov_half_angle", config.fov_half_angle}, {"fov_range", config.fov_range},
              {"max_tick", config.max_tick},           {"seed", config.seed}};
}

int ArenaState::find_player(std::string_view name) const {
  for (std::size_t i = 0; i < players.size(); ++i) {
    if (players[i].name == name) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

int ArenaState::alive_team_count() const {
  std::set<int> teams;
  for (const auto& player : players) {
    if (player.alive) {
      teams.insert(player.team);
    }
  }
  return static_cast<int>(teams.size());
}

Json action_to_json(const ArenaAction& action) {
  return Json{{"fire", action.fire}, {"strafe", action.strafe}, {"forward", action.forward}, {"rotate", action.rotate}};
}

ArenaAction action_from_json(const Json& json) {
  validate_against_schema(json, ARENA_ACTION_SCHEMA);
  return ArenaAction{json.at("fire").get<bool>(), json.at("strafe").get<double>(), json.at("forward").get<double>(),
                     json.at("rotate").get<double>()};
}

Visibility compute_visibility(const ArenaState& state, int player) {
  Visibility result;
  const auto& self = state.players.at(static_cast<std::size_t>(player));
  if (!self.alive) {
    return result;
  }
  const auto& config = state.config;
  auto in_view = [&](Vec2 local) {
    if (local.norm() > config.fov_range) {
      return false;
    }
    return std::abs(std::atan2(local.y, local.x)) <= config.fov_half_angle;
  };
  for (std::size_t i = 0; i < state.players.size(); ++i) {
    if (static_cast<int>(i) == player) {
      continue;
    }
    const auto& other = state.players[i];
    const Vec2 local = to_local(other.position - self.position, self.theta);
    if (in_view(local)) {
      result.players.push_back(VisiblePlayer{static_cast<int>(i), local, wrap_angle(other.theta - self.theta),
                                             other.team != self.team, other.alive});
    }
  }
  for (std::size_t i = 0; i < state.projectiles.size(); ++i) {
    const auto& ball = state.projectiles[i];
    const Vec2 local = to_local(ball.position - self.position, self.theta);
    if (in_view(local)) {
      result.projectiles.push_back(
          VisibleProjectile{static_cast<int>(i), local, to_local(ball.velocity - self.velocity, self.theta)});
    }
  }
  return result;
}

Json observe(const ArenaState& state, int player) {
  const auto& self = state.players.at(static_cast<std::size_t>(player));
  Json visible_players = Json::array();
  Json visible_projectiles = Json::array();
  auto visibility = compute_visibility(state, player);
  for (const auto& other : visibility.players) {
    visible_players.push_back(Json{{"x", other.relative_position.x},
                                   {"y", other.relative_position.y},
                                   {"theta", other.relative_theta},
                                   {"opponent", other.opponent},
                                   {"alive", other.alive}});
  }
  for (const auto& ball : visibility.projectiles) {
    visible_projectiles.push_back(Json{{"x", ball.relative_position.x},
                                       {"y", ball.relative_position.y},
                                       {"vx", ball.relative_velocity.x},
                                       {"vy", ball.relative_velocity.y}});
  }
  return Json{{"tick_id", state.tick},
              {"self", Json{{"x", self.position.x}, {"y", self.position.y}, {"theta", self.theta}, {"alive", self.alive}}},
              {"visible_players", std::move(visible_players)},
              {"visible_projectiles", std::move(visible_projectiles)}};
}

Json world_state(const ArenaState& state) {
  Json players = Json::array();
  for (const auto& p : state.players) {
    players.push_back(Json{{"name", p.name},
                           {"team", p.team},
                           {"x", p.position.x},
                           {"y", p.position.y},
                           {"theta", p.theta},
                           {"alive", p.alive}});
  }
  Json projectiles = Json::array();
  for (const auto& ball : state.projectiles) {
    projectiles.push_back(Json{{"owner", ball.owner},
                               {"x", ball.position.x},
                               {"y", ball.position.y},
                               {"vx", ball.velocity.x},
                               {"vy", ball.velocity.y}});
  }
  return Json{{"tick_id", state.tick},
              {"arena_size", state.config.arena_size},
              {"players", std::move(players)},
              {"projectiles", std::move(projectiles)}};
}

ArenaState arena_init(const ArenaConfig& config, const std::vector<std::string>& player_names) {
  config.validate();
  if (static_cast<int>(player_names.size()) != config.player_count()) {
    throw InitError(fmt::format("{} player actors for team sizes totalling {}", player_names.size(),
                                config.player_count()));
  }
  ArenaState state;
  state.config = config;
  std::mt19937_64 rng(config.seed);
  const double lo = config.player_radius;
  const double hi = config.arena_size - config.player_radius;
  std::uniform_real_distribution<double> coord(lo, hi);
  std::uniform_real_distribution<double> angle(-PI, PI);
  const double spacing = 4.0 * config.player_radius;

  std::size_t index = 0;
  for (std::size_t team = 0; team < config.teams.size(); ++team) {
    for (int k = 0; k < config.teams[team]; ++k, ++index) {
      PlayerState player;
      player.name = player_names[index];
      player.team = static_cast<int>(team);
      bool placed = false;
      for (int attempt = 0; attempt < PLACEMENT_ATTEMPTS && !placed; ++attempt) {
        player.position = {coord(rng), coord(rng)};
        placed = std::all_of(state.players.begin(), state.players.end(), [&](const PlayerState& other) {
          return (other.position - player.position).norm() >= spacing;
        });
      }
      if (!placed) {
        throw InitError("could not place every player with the required spacing");
      }
      player.theta = wrap_angle(angle(rng));
      state.players.push_back(std::move(player));
    }
  }
  for (auto& player : state.players) {
    player.opponents_at_start = static_cast<int>(std::count_if(
        state.players.begin(), state.players.end(), [&](const PlayerState& o) { return o.team != player.team; }));
  }
  return state;
}

StepResult arena_step(ArenaState& state, const std::map<std::string, ArenaAction>& actions) {
  const auto& config = state.config;
  const std::size_t n = state.players.size();
  const double hit_radius = config.player_radius + config.ball_radius;

  // Projectile flights are resolved against the start-of-tick world.
  struct Hit {
    double s = INF;
    std::size_t projectile = 0;
    std::string shooter;
  };
  std::vector<std::optional<Hit>> hits(n);
  std::vector<Projectile> surviving;
  surviving.reserve(state.projectiles.size());
  for (std::size_t j = 0; j < state.projectiles.size(); ++j) {
    const auto& ball = state.projectiles[j];
    std::optional<std::pair<double, std::size_t>> best;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& target = state.players[i];
      if (!target.alive || target.team == ball.owner_team) {
        continue;
      }
      if (auto s = segment_circle_hit(ball.position, ball.velocity, target.position, hit_radius)) {
        if (!best || *s < best->first) {
          best = std::make_pair(*s, i);
        }
      }
    }
    const double wall = wall_contact(ball.position, ball.velocity, config.arena_size, config.ball_radius);
    if (best && best->first <= wall) {
      auto& slot = hits[best->second];
      if (!slot || best->first < slot->s) {
        slot = Hit{best->first, j, ball.owner};
      }
      continue;
    }
    if (wall <= 1.0) {
      continue;
    }
    Projectile moved = ball;
    moved.position = ball.position + ball.velocity;
    surviving.push_back(std::move(moved));
  }

  // Players hit this tick do not act.
  std::vector<Projectile> spawned;
  const double lo = config.player_radius;
  const double hi = config.arena_size - config.player_radius;
  for (std::size_t i = 0; i < n; ++i) {
    auto& player = state.players[i];
    if (!player.alive || hits[i]) {
      player.velocity = {};
      continue;
    }
    ArenaAction action;
    if (auto it = actions.find(player.name); it != actions.end()) {
      action = it->second;
    }
    player.theta = wrap_angle(player.theta + action.rotate * config.turn_speed);
    const Vec2 ahead = heading(player.theta);
    // Positive strafe is to the right of the heading: +pi/2 in the y-down arena frame.
    const Vec2 right{-ahead.y, ahead.x};
    const Vec2 before = player.position;
    Vec2 after = before + (ahead * action.forward + right * action.strafe) * config.move_speed;
    after.x = std::clamp(after.x, lo, hi);
    after.y = std::clamp(after.y, lo, hi);
    player.position = after;
    player.velocity = after - before;

    if (player.cooldown > 0) {
      --player.cooldown;
    }
    if (action.fire && player.cooldown == 0) {
      Projectile ball;
      ball.owner = player.name;
      ball.owner_team = player.team;
      ball.position = player.position + ahead * hit_radius;
      ball.velocity = ahead * config.shot_velocity + player.velocity;
      spawned.push_back(std::move(ball));
      player.cooldown = config.shot_cooldown;
    }
  }
  surviving.insert(surviving.end(), spawned.begin(), spawned.end());
  state.projectiles = std::move(surviving);

  StepResult result;
  std::vector<int> kills(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!hits[i]) {
      continue;
    }
    state.players[i].alive = false;
    result.eliminations.push_back(Elimination{state.players[i].name, hits[i]->shooter});
    const int shooter = state.find_player(hits[i]->shooter);
    if (shooter >= 0) {
      ++kills[static_cast<std::size_t>(shooter)];
    }
  }

  const double time_penalty = -1.0 / static_cast<double>(config.max_tick);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& player = state.players[i];
    const bool eliminated_now = hits[i].has_value();
    if (!player.alive && !eliminated_now && kills[i] == 0) {
      continue;
    }
    double value = 0.0;
    if (eliminated_now) {
      value = -1.0;
    }
    else if (player.alive) {
      value = time_penalty;
    }
    if (kills[i] > 0) {
      value += static_cast<double>(kills[i]) / static_cast<double>(player.opponents_at_start);
    }
    result.rewards.push_back(Reward{value, 1.0, ENV_PARTICIPANT, player.name, state.tick});
  }

  ++state.tick;
  result.terminal = state.alive_team_count() <= 1 || state.tick >= config.max_tick;
  return result;
}

}  // namespace tw::arena
