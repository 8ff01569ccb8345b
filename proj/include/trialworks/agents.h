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

#ifndef TRIALWORKS_AGENTS_H
#define TRIALWORKS_AGENTS_H

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "trialworks/arena.h"
#include "trialworks/protocol.h"

namespace tw::agents {

inline constexpr std::string_view RANDOM_IMPL = "random_v1";
inline constexpr std::string_view HEURISTIC_IMPL = "heuristic_v1";
inline constexpr std::string_view REINFORCE_IMPL = "reinforce_v1";

// {fire: 2} x {strafe: 3} x {forward: 3} x {rotate: 3}, row-major with fire slowest.
inline constexpr int GRID_SIZE = 54;

struct GridCell {
  bool fire = false;
  int strafe = 0;
  int forward = 0;
  int rotate = 0;

  bool operator==(const GridCell&) const = default;
};

int encode_cell(const GridCell& cell);
GridCell decode_cell(int index);
arena::ArenaAction cell_to_action(int index);

// What an agent may know about the arena besides its observations.
struct ArenaHints {
  double arena_size = 100.0;
  double fov_range = 50.0;
  double turn_speed = 0.1;

  static ArenaHints from_env_config(const Json& env_config);
};

// bias, self pose (x/S, y/S, cos, sin), self alive, nearest live opponent (present, range,
// bearing, |bearing|, relative heading, alive), nearest projectile (present, range, bearing,
// |bearing|). Absent entities read as range 1 (= fov_range), bearing 0, present 0.
inline constexpr std::size_t FEATURE_COUNT = 16;
using Features = std::array<double, FEATURE_COUNT>;

Features extract_features(const Json& observation, const ArenaHints& hints);

// Uniform over the 54-cell grid.
arena::ArenaAction random_act(const Json& observation, std::mt19937_64& rng);

// Scripted duelist: turn toward the nearest visible opponent, fire once lined up, close in or
// dodge. With nothing in view it spins in place while drifting through a patrol circuit.
arena::ArenaAction heuristic_act(const Json& observation, const ArenaHints& hints = {});

inline constexpr double SCORE_CLAMP = 30.0;

// Linear scores per grid cell over the features, softmax policy.
class PolicyModel {
public:
  PolicyModel(double learning_rate = 0.01, double gamma = 0.99);

  std::array<double, GRID_SIZE> scores(const Features& features) const;
  std::array<double, GRID_SIZE> probabilities(const Features& features) const;
  // d log pi(cell | features) / d weights, laid out like weights().
  std::vector<double> log_prob_gradient(const Features& features, int cell) const;

  std::vector<double>& weights() { return m_weights; }
  const std::vector<double>& weights() const { return m_weights; }
  double& weight(int cell, std::size_t feature) { return m_weights[static_cast<std::size_t>(cell) * FEATURE_COUNT + feature]; }
  double learning_rate() const { return m_learning_rate; }
  double gamma() const { return m_gamma; }
  // Throws ModelError if any weight is not finite.
  void check_finite() const;

  bool operator==(const PolicyModel&) const = default;

private:
  std::vector<double> m_weights;
  double m_learning_rate;
  double m_gamma;
};

struct PolicyDecision {
  arena::ArenaAction action;
  int cell = 0;
  double log_prob = 0.0;
  Features features{};
};

PolicyDecision reinforce_act(const PolicyModel& model, const Json& observation, std::mt19937_64& rng,
                             const ArenaHints& hints = {});

struct EpisodeStep {
  Features features{};
  int cell = 0;
  double log_prob = 0.0;
  double reward = 0.0;
};

// G_t = sum_k gamma^(k-t) r_k.
std::vector<double> returns_to_go(const std::vector<double>& rewards, double gamma);
// Zero mean, unit variance (variance floored at 1e-8); left alone for fewer than two entries.
std::vector<double> normalize_returns(std::vector<double> returns);

PolicyModel reinforce_update(const PolicyModel& model, const std::vector<EpisodeStep>& episode);

// Acting reads an immutable snapshot; updates are serialized and swap the snapshot whole.
class ModelStore {
public:
  explicit ModelStore(PolicyModel initial = PolicyModel()) :
      m_current(std::make_shared<const PolicyModel>(std::move(initial))) {}

  std::shared_ptr<const PolicyModel> snapshot() const;
  void update(const std::vector<EpisodeStep>& episode);
  void replace(PolicyModel model);
  std::size_t updates() const;

private:
  mutable std::mutex m_lock;
  std::mutex m_update_lock;
  std::shared_ptr<const PolicyModel> m_current;
  std::size_t m_updates = 0;
};

Envelope checkpoint_envelope(const PolicyModel& model);
PolicyModel model_from_checkpoint(const Envelope& envelope);
void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path);
PolicyModel load_checkpoint(const std::filesystem::path& path);

// Stable per-actor stream seed derived from the trial seed.
std::uint64_t actor_seed(std::uint64_t trial_seed, std::string_view actor_name);

}  // namespace tw::agents

#endif
