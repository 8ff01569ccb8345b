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

#ifndef TRIALWORKS_ORCHESTRATOR_H
#define TRIALWORKS_ORCHESTRATOR_H

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "trialworks/error.h"
#include "trialworks/metrics.h"
#include "trialworks/protocol.h"
#include "trialworks/registry.h"
#include "trialworks/transport.h"

namespace tw {

inline const ParticipantId ORCHESTRATOR_ID{ParticipantKind::orchestrator, "orchestrator"};

struct OrchestratorOptions {
  std::filesystem::path log_dir = "logs";
  Millis join_timeout{30000};
  Millis liveness_window = DEFAULT_LIVENESS_WINDOW;
  // Dialing, join acknowledgements and end-of-trial acknowledgements.
  Millis setup_timeout{5000};
  // Longest the environment may take to answer one tick.
  Millis env_timeout{30000};
  double metrics_threshold = 0.5;
  // Milliseconds since the epoch, stamped into log headers. System clock when empty.
  std::function<std::int64_t()> wall_clock;
};

struct TrialEvent {
  std::string trial_id;
  TrialState state;
  // Set on ended: ticks, per-actor totals, per-implementation totals, log path.
  Json detail = Json::object();
};

void to_json(Json& json, const TrialEvent& event);

using WatchCallback = std::function<void(const TrialEvent&)>;
using WatchId = std::uint64_t;
inline constexpr std::string_view WATCH_ALL = "*";

// A client join that the trial refuses; code is one of not_found, unknown_slot, slot_taken,
// trial_ended.
class JoinRefused : public Error {
public:
  JoinRefused(std::string code, const std::string& detail) : Error(detail), m_code(std::move(code)) {}
  const std::string& code() const { return m_code; }

private:
  std::string m_code;
};

class Trial;

class Orchestrator {
public:
  explicit Orchestrator(OrchestratorOptions options = {}, std::shared_ptr<InProcNetwork> inproc = nullptr);
  ~Orchestrator();
  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  // Validates the parameters (InvalidParams), announces the trial as pending and starts its loop.
  // `watch`, when given, observes this trial from pending on.
  std::string start_trial(TrialParams params, WatchCallback watch = {});
  // Throws NotFound for an unknown or ended trial; a second request while terminating is a no-op.
  void terminate_trial(const std::string& trial_id, const std::string& reason = "client_requested");
  // Throws NotFound.
  TrialState trial_state(const std::string& trial_id) const;
  std::optional<TrialState> wait_until_ended(const std::string& trial_id, Millis timeout) const;
  std::vector<std::string> trial_ids() const;

  // Emits the current state of every matching trial, then each later transition in order.
  // `filter` is a trial id or "*". Throws NotFound for an unknown trial id.
  WatchId watch_trials(const std::string& filter, WatchCallback callback);
  void unwatch(WatchId id);

  // Serves one peer until it disconnects: controller requests, service registrations and
  // heartbeats, and client joins.
  void handle_connection(ConnectionPtr conn);

  std::uint16_t listen_tcp(const std::string& host, std::uint16_t port);
  std::uint16_t listen_ws(const std::string& host, std::uint16_t port);
  void listen_inproc(const std::string& name);

  Registry& registry() { return m_registry; }
  std::shared_ptr<Metrics> metrics() const { return m_metrics; }
  const std::shared_ptr<InProcNetwork>& inproc() const { return m_inproc; }
  const OrchestratorOptions& options() const { return m_options; }

  // Terminates live trials, then closes listeners.
  void shutdown();

private:
  friend class Trial;

  std::shared_ptr<Trial> find_trial(const std::string& trial_id) const;
  void publish(Trial& trial, TrialState state, Json detail = Json::object());
  std::int64_t wall_time_ms() const;

  struct Watcher {
    WatchId id = 0;
    std::string filter;
    WatchCallback callback;
  };

  OrchestratorOptions m_options;
  std::shared_ptr<InProcNetwork> m_inproc;
  Registry m_registry;
  std::shared_ptr<Metrics> m_metrics;

  mutable std::mutex m_trials_lock;
  std::map<std::string, std::shared_ptr<Trial>> m_trials;
  std::uint64_t m_trial_counter = 0;

  // Guards every state change so watchers see transitions in order.
  mutable std::mutex m_watch_lock;
  mutable std::condition_variable m_state_cv;
  std::vector<Watcher> m_watchers;
  WatchId m_next_watch = 1;

  std::vector<std::unique_ptr<TcpServer>> m_servers;
  std::vector<std::string> m_inproc_names;
  ThreadGroup m_trial_threads;
  std::atomic<bool> m_stopping{false};
};

}  // namespace tw

#endif
