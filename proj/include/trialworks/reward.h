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

#ifndef TRIALWORKS_REWARD_H
#define TRIALWORKS_REWARD_H

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trialworks/protocol.h"

namespace tw {

// Confidence-weighted mean of every reward targeting one (actor, tick).
struct AggregatedReward {
  std::string actor;
  std::uint64_t target_tick = 0;
  double value = 0.0;
  double total_confidence = 0.0;
  std::vector<ParticipantId> sources;

  bool operator==(const AggregatedReward&) const = default;
};

void to_json(Json& json, const AggregatedReward& aggregated);
void from_json(const Json& json, AggregatedReward& aggregated);

// value = sum(v * c) / sum(c), accumulated in the given order. `rewards` must be non-empty and
// share one (target_actor, target_tick).
AggregatedReward aggregate_rewards(std::span<const Reward> rewards);

using RewardKey = std::pair<std::string, std::uint64_t>;

class RewardLedger {
public:
  // Returns the updated aggregate for the reward's (actor, tick).
  AggregatedReward add(const Reward& reward);

  std::map<RewardKey, AggregatedReward> table() const;
  // Sum of the aggregated values over every target tick of `actor`.
  double total(const std::string& actor) const;
  std::size_t size() const { return m_entries.size(); }
  const std::map<RewardKey, std::vector<Reward>>& entries() const { return m_entries; }

private:
  std::map<RewardKey, std::vector<Reward>> m_entries;
};

}  // namespace tw

#endif
