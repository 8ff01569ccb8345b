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

#include "trialworks/reward.h"

#include "trialworks/error.h"

namespace tw {

void to_json(Json& json, const AggregatedReward& aggregated) {
  json = Json{{"actor", aggregated.actor},
              {"target_tick", aggregated.target_tick},
              {"value", aggregated.value},
              {"total_confidence", aggregated.total_confidence},
              {"sources", aggregated.sources}};
}

void from_json(const Json& json, AggregatedReward& aggregated) {
  aggregated.actor = json.at("actor").get<std::string>();
  aggregated.target_tick = json.at("target_tick").get<std::uint64_t>();
  aggregated.value = json.at("value").get<double>();
  aggregated.total_confidence = json.at("total_confidence").get<double>();
  aggregated.sources = json.at("sources").get<std::vector<ParticipantId>>();
}

AggregatedReward aggregate_rewards(std::span<const Reward> rewards) {
  if (rewards.empty()) {
    throw Error("cannot aggregate an empty reward set");
  }
  AggregatedReward result;
  result.actor = rewards.front().target_actor;
  result.target_tick = rewards.front().target_tick;
  double weighted = 0.0;
  double confidence = 0.0;
  for (const auto& reward : rewards) {
    weighted += reward.value * reward.confidence;
    confidence += reward.confidence;
    result.sources.push_back(reward.source);
  }
  result.value = weighted / confidence;
  result.total_confidence = confidence;
  return result;
}

AggregatedReward RewardLedger::add(const Reward& reward) {
  auto& contributors = m_entries[{reward.target_actor, reward.target_tick}];
  contributors.push_back(reward);
  return aggregate_rewards(contributors);
}

std::map<RewardKey, AggregatedReward> RewardLedger::table() const {
  std::map<RewardKey, AggregatedReward> result;
  for (const auto& [key, rewards] : m_entries) {
    result.emplace(key, aggregate_rewards(rewards));
  }
  return result;
}

double RewardLedger::total(const std::string& actor) const {
  double sum = 0.0;
  for (auto it = m_entries.lower_bound({actor, 0}); it != m_entries.end() && it->first.first == actor; ++it) {
    sum += aggregate_rewards(it->second).value;
  }
  return sum;
}

}  // namespace tw
