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

#ifndef TRIALWORKS_REGISTRY_H
#define TRIALWORKS_REGISTRY_H

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "trialworks/protocol.h"

namespace tw {

// Environment services register under this class name.
inline constexpr std::string_view ENVIRONMENT_CLASS = "environment";

inline constexpr std::chrono::milliseconds DEFAULT_LIVENESS_WINDOW{10000};

// Mixed into the trial seed so endpoint draws do not correlate with other seeded streams.
inline constexpr std::uint64_t HOOK_SALT = 0x5bd1e9955bd1e995ULL;

struct ServiceRecord {
  std::string class_name;
  std::string implementation;
  std::string endpoint;
  std::chrono::steady_clock::time_point last_heartbeat;
};

// Service directory plus the pre-trial hook that binds implementation names to endpoints.
class Registry {
public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  explicit Registry(std::chrono::milliseconds liveness_window = DEFAULT_LIVENESS_WINDOW,
                    Clock clock = [] { return std::chrono::steady_clock::now(); });

  // Inserts or refreshes. Throws ConflictError when (implementation, endpoint) is already held by
  // another class, ProtocolError on a malformed endpoint.
  void register_service(const std::string& class_name, const std::string& implementation,
                        const std::string& endpoint);

  // Live records only, ordered by endpoint.
  std::vector<ServiceRecord> candidates(const std::string& class_name, const std::string& implementation) const;
  std::vector<ServiceRecord> snapshot() const;

  // Fills every non-client slot (and the environment) lacking an endpoint with a uniform draw
  // among live candidates; the draw is seeded from params.seed ^ HOOK_SALT. Throws
  // ResolutionError naming the first slot without candidates.
  TrialParams pre_trial_hook(const TrialParams& params) const;

  std::chrono::milliseconds liveness_window() const { return m_window; }

private:
  bool live(const ServiceRecord& record, std::chrono::steady_clock::time_point now) const;

  std::chrono::milliseconds m_window;
  Clock m_clock;
  mutable std::mutex m_lock;
  // keyed by (implementation, endpoint)
  std::map<std::pair<std::string, std::string>, ServiceRecord> m_records;
};

}  // namespace tw

#endif
