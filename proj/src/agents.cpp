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

#include "trialworks/agents.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>
#include <numbers>

#include "trialworks/error.h"
#include "trialworks/schema.h"

namespace tw::agents {
namespace {

constexpr double PI = std::numbers::pi;
constexpr double ALIGNED_BEARING = 0.1;
constexpr double CLOSE_RANGE_FRACTION = 0.3;
constexpr std::uint64_t PATROL_LEG_TICKS = 100;

const ParticipantId CHECKPOINT_SENDER{ParticipantKind::actor, std::string(REINFORCE_IMPL)};

struct Polar {
  double range = 0.0;
  double bearing = 0.0;
};

Polar polar(const Json& entity) {
  const double x = entity.at("x").get<double>();
  const double y = entity.at("y").get<double>();
  return {std::hypot(x, y), std::atan2(y, x)};
}

const Json* nearest_live_opponent(const Json& observation) {
  const Json* best = nullptr;
  double best_range = 0.0;
  for (const auto& other : observation.at("visible_players")) {
    if (!other.at("opponent").get<bool>() || !other.at("alive").get<bool>()) {
      continue;
    }
    const double range = polar(other).range;
    if (best == nullptr || range < best_range) {
      best = &other;
      best_range = range;
    }
  }
  return best;
}

const Json* nearest_projectile(const Json& observation) {
  const Json* best = nullptr;
  double best_range = 0.0;
  for (const auto& ball : observation.at("visible_projectiles")) {
    const double range = polar(ball).range;
    if (best == nullptr || range < best_range) {
      best = &ball;
      best_range = range;
    }
  }
  return best;
}

}  // namespace

int encode_cell(const GridCell& cell) {
  return (cell.fire ? 27 : 0) + (cell.strafe + 1) * 9 + (cell.forward + 1) * 3 + (cell.rotate + 1);
}

GridCell decode_cell(int index) {
  if (index < 0 || index >= GRID_SIZE) {
    throw Error(fmt::format("grid index {} out of range", index));
  }
  GridCell cell;
  cell.fire = index >= 27;
  index %= 27;
  cell.strafe = index / 9 - 1;
  cell.forward = (index / 3) % 3 - 1;
  cell.rotate = index % 3 - 1;
  return cell;
}

arena::ArenaAction cell_to_action(int index) {
  auto cell = decode_cell(index);
  return arena::ArenaAction{cell.fire, static_cast<double>(cell.strafe), static_cast<double>(cell.forward),
                            static_cast<double>(cell.rotate)};
}

ArenaHints ArenaHints::from_env_config(const Json& env_config) {
  ArenaHints hints;
  if (!env_config.is_object()) {
    return hints;
  }
  hints.arena_size = env_config.value("arena_size", hints.arena_size);
  hints.fov_range = env_config.value("fov_range", hints.arena_size / 2.0);
  hints.turn_speed = env_config.value("turn_speed", hints.turn_speed);
  return hints;
}

Features extract_features(const Json& observation, const ArenaHints& hints) {
  Features f{};
  const auto& self = observation.at("self");
  const double theta = self.at("theta").get<double>();
  f[0] = 1.0;
  f[1] = self.at("x").get<double>() / hints.arena_size;
  f[2] = self.at("y").get<double>() / hints.arena_size;
  f[3] = std::cos(theta);
  f[4] = std::sin(theta);
  f[5] = self.at("alive").get<bool>() ? 1.0 : 0.0;

  f[7] = 1.0;
  if (const Json* opponent = nearest_live_opponent(observation)) {
    const auto p = polar(*opponent);
    f[6] = 1.0;
    f[7] = p.range / hints.fov_range;
    f[8] = p.bearing / PI;
    f[9] = std::abs(p.bearing) / PI;
    f[10] = opponent->at("theta").get<double>() / PI;
    f[11] = 1.0;
  }
  f[13] = 1.0;
  if (const Json* ball = nearest_projectile(observation)) {
    const auto p = polar(*ball);
    f[12] = 1.0;
    f[13] = p.range / hints.fov_range;
    f[14] = p.bearing / PI;
    f[15] = std::abs(p.bearing) / PI;
  }
  return f;
}

arena::ArenaAction random_act(const Json& /*observation*/, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, GRID_SIZE - 1);
  return cell_to_action(pick(rng));
}

arena::ArenaAction heuristic_act(const Json& observation, const ArenaHints& hints) {
  arena::ArenaAction action;
  const auto& self = observation.at("self");
  if (!self.at("alive").get<bool>()) {
    return action;
  }
  if (const Json* opponent = nearest_live_opponent(observation)) {
    const auto p = polar(*opponent);
    action.rotate = std::clamp(p.bearing / hints.turn_speed, -1.0, 1.0);
    action.fire = std::abs(p.bearing) < ALIGNED_BEARING;
    if (p.range > CLOSE_RANGE_FRACTION * hints.fov_range) {
      action.forward = 1.0;
    }
    else {
      const auto tick = observation.at("tick_id").get<std::uint64_t>();
      action.strafe = (tick / 20) % 2 == 0 ? 1.0 : -1.0;
    }
    return action;
  }

  action.rotate = 1.0;
  // Patrol the four quadrant centres, one leg per PATROL_LEG_TICKS.
  const auto tick = observation.at("tick_id").get<std::uint64_t>();
  static constexpr std::array<std::array<double, 2>, 4> WAYPOINTS{{{0.25, 0.25}, {0.75, 0.25}, {0.75, 0.75}, {0.25, 0.75}}};
  const auto& wp = WAYPOINTS[(tick / PATROL_LEG_TICKS) % WAYPOINTS.size()];
  const arena::Vec2 position{self.at("x").get<double>(), self.at("y").get<double>()};
  const arena::Vec2 target{wp[0] * hints.arena_size, wp[1] * hints.arena_size};
  const auto local = arena::to_local(target - position, self.at("theta").get<double>());
  const double distance = local.norm();
  if (distance > 1.0) {
    action.forward = local.x / distance;
    action.strafe = local.y / distance;
  }
  return action;
}

PolicyModel::PolicyModel(double learning_rate, double gamma) :
    m_weights(static_cast<std::size_t>(GRID_SIZE) * FEATURE_COUNT, 0.0), m_learning_rate(learning_rate), m_gamma(gamma) {}

void PolicyModel::check_finite() const {
  for (double w : m_weights) {
    if (!std::isfinite(w)) {
      throw ModelError("model weights are not finite");
    }
  }
}

std::array<double, GRID_SIZE> PolicyModel::scores(const Features& features) const {
  std::array<double, GRID_SIZE> out{};
  for (int c = 0; c < GRID_SIZE; ++c) {
    double s = 0.0;
    const double* row = m_weights.data() + static_cast<std::size_t>(c) * FEATURE_COUNT;
    for (std::size_t f = 0; f < FEATURE_COUNT; ++f) {
      s += row[f] * features[f];
    }
    if (std::isnan(s)) {
      throw ModelError("policy score is NaN");
    }
    out[static_cast<std::size_t>(c)] = std::clamp(s, -SCORE_CLAMP, SCORE_CLAMP);
  }
  return out;
}

std::array<double, GRID_SIZE> PolicyModel::probabilities(const Features& features) const {
  auto s = scores(features);
  const double top = *std::max_element(s.begin(), s.end());
  double sum = 0.0;
  for (auto& v : s) {
    v = std::exp(v - top);
    sum += v;
  }
  for (auto& v : s) {
    v /= sum;
  }
  return s;
}

std::vector<double> PolicyModel::log_prob_gradient(const Features& features, int cell) const {
  const auto p = probabilities(features);
  std::vector<double> grad(m_weights.size(), 0.0);
  for (int c = 0; c < GRID_SIZE; ++c) {
    const double coeff = (c == cell ? 1.0 : 0.0) - p[static_cast<std::size_t>(c)];
    double* row = grad.data() + static_cast<std::size_t>(c) * FEATURE_COUNT;
    for (std::size_t f = 0; f < FEATURE_COUNT; ++f) {
      row[f] = coeff * features[f];
    }
  }
  return grad;
}

PolicyDecision reinforce_act(const PolicyModel& model, const Json& observation, std::mt19937_64& rng,
                             const ArenaHints& hints) {
  PolicyDecision decision;
  decision.features = extract_features(observation, hints);
  for (double f : decision.features) {
    if (!std::isfinite(f)) {
      throw ModelError("features are not finite");
    }
  }
  const auto p = model.probabilities(decision.features);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double cumulative = 0.0;
  int cell = GRID_SIZE - 1;
  for (int c = 0; c < GRID_SIZE; ++c) {
    cumulative += p[static_cast<std::size_t>(c)];
    if (u < cumulative) {
      cell = c;
      break;
    }
  }
  decision.cell = cell;
  decision.log_prob = std::log(p[static_cast<std::size_t>(cell)]);
  decision.action = cell_to_action(cell);
  return decision;
}

std::vector<double> returns_to_go(const std::vector<double>& rewards, double gamma) {
  std::vector<double> out(rewards.size(), 0.0);
  double running = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    running = rewards[i] + gamma * running;
    out[i] = running;
  }
  return out;
}

std::vector<double> normalize_returns(std::vector<double> returns) {
  if (returns.size() < 2) {
    return returns;
  }
  double mean = 0.0;
  for (double g : returns) {
    mean += g;
  }
  mean /= static_cast<double>(returns.size());
  double var = 0.0;
  for (double g : returns) {
    var += (g - mean) * (g - mean);
  }
  var /= static_cast<double>(returns.size());
  const double stddev = std::sqrt(std::max(var, 1e-8));
  for (double& g : returns) {
    g = (g - mean) / stddev;
  }
  return returns;
}

PolicyModel reinforce_update(const PolicyModel& model, const std::vector<EpisodeStep>& episode) {
  if (episode.empty()) {
    return model;
  }
  model.check_finite();
  std::vector<double> rewards;
  rewards.reserve(episode.size());
  for (const auto& step : episode) {
    rewards.push_back(step.reward);
  }
  const auto returns = normalize_returns(returns_to_go(rewards, model.gamma()));

  PolicyModel updated = model;
  auto& weights = updated.weights();
  for (std::size_t t = 0; t < episode.size(); ++t) {
    if (returns[t] == 0.0) {
      continue;
    }
    const auto& step = episode[t];
    const auto p = model.probabilities(step.features);
    const double scale = model.learning_rate() * returns[t];
    for (int c = 0; c < GRID_SIZE; ++c) {
      const double coeff = scale * ((c == step.cell ? 1.0 : 0.0) - p[static_cast<std::size_t>(c)]);
      double* row = weights.data() + static_cast<std::size_t>(c) * FEATURE_COUNT;
      for (std::size_t f = 0; f < FEATURE_COUNT; ++f) {
        row[f] += coeff * step.features[f];
      }
    }
  }
  updated.check_finite();
  return updated;
}

std::shared_ptr<const PolicyModel> ModelStore::snapshot() const {
  const std::lock_guard lg(m_lock);
  return m_current;
}

void ModelStore::update(const std::vector<EpisodeStep>& episode) {
  const std::lock_guard serial(m_update_lock);
  auto next = std::make_shared<const PolicyModel>(reinforce_update(*snapshot(), episode));
  const std::lock_guard lg(m_lock);
  m_current = std::move(next);
  ++m_updates;
}

void ModelStore::replace(PolicyModel model) {
  const std::lock_guard serial(m_update_lock);
  auto next = std::make_shared<const PolicyModel>(std::move(model));
  const std::lock_guard lg(m_lock);
  m_current = std::move(next);
}

std::size_t ModelStore::updates() const {
  const std::lock_guard lg(m_lock);
  return m_updates;
}

Envelope checkpoint_envelope(const PolicyModel& model) {
  Json arrays = Json::array();
  arrays.push_back(Json{{"name", "weights"}, {"values", model.weights()}});
  arrays.push_back(Json{{"name", "shape"}, {"values", {static_cast<double>(GRID_SIZE), static_cast<double>(FEATURE_COUNT)}}});
  arrays.push_back(Json{{"name", "hyperparameters"}, {"values", {model.learning_rate(), model.gamma()}}});
  return Envelope{MsgType::model_checkpoint, "", 0, CHECKPOINT_SENDER, Json{{"arrays", std::move(arrays)}}};
}

PolicyModel model_from_checkpoint(const Envelope& envelope) {
  if (envelope.msg_type != MsgType::model_checkpoint) {
    throw ModelError("not a model checkpoint");
  }
  std::map<std::string, std::vector<double>> arrays;
  for (const auto& entry : envelope.payload.at("arrays")) {
    arrays[entry.at("name").get<std::string>()] = entry.at("values").get<std::vector<double>>();
  }
  const auto& shape = arrays.at("shape");
  if (shape.size() != 2 || shape[0] != GRID_SIZE || shape[1] != static_cast<double>(FEATURE_COUNT)) {
    throw ModelError("checkpoint shape does not match the policy layout");
  }
  const auto& hyper = arrays.at("hyperparameters");
  PolicyModel model(hyper.at(0), hyper.at(1));
  const auto& weights = arrays.at("weights");
  if (weights.size() != model.weights().size()) {
    throw ModelError("checkpoint weight count mismatch");
  }
  model.weights() = weights;
  model.check_finite();
  return model;
}

void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path) {
  auto frame = encode_frame(checkpoint_envelope(model));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
  if (!out) {
    throw LogIoError("cannot write checkpoint " + path.string());
  }
}

PolicyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw LogIoError("cannot read checkpoint " + path.string());
  }
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return model_from_checkpoint(decode_frame(bytes, FrameChannel::storage).envelope);
}

std::uint64_t actor_seed(std::uint64_t trial_seed, std::string_view actor_name) {
  // FNV-1a over the name, then a splitmix64 finalizer.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : actor_name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = trial_seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace tw::agents
