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

#include "trialworks/registry.h"

#include <random>

#include "trialworks/error.h"
#include "trialworks/transport.h"

namespace tw {

Registry::Registry(std::chrono::milliseconds liveness_window, Clock clock) :
    m_window(liveness_window), m_clock(std::move(clock)) {}

bool Registry::live(const ServiceRecord& record, std::chrono::steady_clock::time_point now) const {
  return now - record.last_heartbeat <= m_window;
}

void Registry::register_service(const std::string& class_name, const std::string& implementation,
                                const std::string& endpoint) {
  if (class_name.empty() || implementation.empty()) {
    throw ProtocolError("class_name and implementation are required");
  }
  if (!is_valid_endpoint(endpoint)) {
    throw ProtocolError("invalid endpoint " + endpoint);
  }
  const auto now = m_clock();
  const std::lock_guard lg(m_lock);
  auto [it, inserted] = m_records.try_emplace({implementation, endpoint});
  auto& record = it->second;
  if (!inserted && record.class_name != class_name) {
    throw ConflictError(fmt::format("{} at {} is already registered as class {}", implementation, endpoint,
                                    record.class_name));
  }
  record.class_name = class_name;
  record.implementation = implementation;
  record.endpoint = endpoint;
  record.last_heartbeat = now;
}

std::vector<ServiceRecord> Registry::candidates(const std::string& class_name,
                                                const std::string& implementation) const {
  const auto now = m_clock();
  const std::lock_guard lg(m_lock);
  std::vector<ServiceRecord> result;
  for (auto it = m_records.lower_bound({implementation, ""}); it != m_records.end() && it->first.first == implementation;
       ++it) {
    if (it->second.class_name == class_name && live(it->second, now)) {
      result.push_back(it->second);
    }
  }
  return result;
}

std::vector<ServiceRecord> Registry::snapshot() const {
  const std::lock_guard lg(m_lock);
  std::vector<ServiceRecord> result;
  for (const auto& [key, record] : m_records) {
    result.push_back(record);
  }
  return result;
}

TrialParams Registry::pre_trial_hook(const TrialParams& params) const {
  TrialParams resolved = params;
  std::mt19937_64 rng(params.seed ^ HOOK_SALT);
  auto choose = [&](const std::string& class_name, const std::string& implementation, const std::string& slot) {
    auto found = candidates(class_name, implementation);
    if (found.empty()) {
      throw ResolutionError(slot);
    }
    std::uniform_int_distribution<std::size_t> pick(0, found.size() - 1);
    return found[pick(rng)].endpoint;
  };

  if (!resolved.env_endpoint) {
    resolved.env_endpoint = choose(std::string(ENVIRONMENT_CLASS), resolved.env_implementation, "environment");
  }
  for (auto& slot : resolved.actor_slots) {
    if (slot.is_client || slot.endpoint) {
      continue;
    }
    slot.endpoint = choose(slot.class_name, slot.implementation, slot.actor_name);
  }
  return resolved;
}

}  // namespace tw
