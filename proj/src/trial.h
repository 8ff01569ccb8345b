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

#ifndef TRIALWORKS_SRC_TRIAL_H
#define TRIALWORKS_SRC_TRIAL_H

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include "trialworks/datalog.h"
#include "trialworks/orchestrator.h"
#include "trialworks/reward.h"

namespace tw {

struct Session {
  ParticipantId id;
  ConnectionPtr conn;
  bool is_client = false;
  bool acts = false;
  std::atomic<bool> connected{true};
  // The reader stops once this clears.
  std::atomic<bool> active{true};
};

using SessionPtr = std::shared_ptr<Session>;

struct InboxItem {
  enum class Kind { envelope, disconnect, wake };
  Kind kind = Kind::wake;
  SessionPtr session;
  Envelope envelope;
};

// Everything the trial loop reacts to, in arrival order.
class Inbox {
public:
  void push(InboxItem item);
  std::optional<InboxItem> pop_until(std::chrono::steady_clock::time_point deadline);

private:
  std::mutex m_lock;
  std::condition_variable m_cv;
  std::deque<InboxItem> m_items;
};

class Trial {
public:
  Trial(Orchestrator& orchestrator, TrialParams params);

  const std::string& id() const { return m_params.trial_id; }
  TrialState state() const;
  void set_state(TrialState state);

  // Body of the trial thread.
  void run();

  // Throws JoinRefused. The caller keeps reading with client_read.
  SessionPtr join(const std::string& actor_name, const ConnectionPtr& conn);
  void client_read(const SessionPtr& session);
  // Throws NotFound once ended.
  void request_terminate(const std::string& reason);

private:
  void transition(TrialStateKind state, std::optional<std::string> reason = std::nullopt, Json detail = Json::object());
  void setup();
  bool required_clients_joined() const;
  std::string wait_for_clients();
  std::string loop();
  void finish(const std::string& reason);

  void read_loop(const SessionPtr& session);
  void start_reader(const SessionPtr& session);
  // Handles one inbox item; returns false once the environment is gone.
  bool dispatch(InboxItem& item);
  // Waits for the environment's next observation_set. Returns an end reason on failure.
  std::optional<std::string> await_env_observations(std::uint64_t expected_tick);

  void route_reward(const SessionPtr& from, const Envelope& envelope);
  void route_message(const SessionPtr& from, const Envelope& envelope);
  void accept_action(const SessionPtr& from, const Envelope& envelope);
  void send_error(const SessionPtr& to, const std::string& code, const std::string& detail);
  void send_to(const SessionPtr& to, const Envelope& envelope);
  std::map<std::string, SessionPtr> sessions() const;
  ParticipantId participant_for(const ActorSlot& slot) const;

  Orchestrator& m_orch;
  TrialParams m_params;

  mutable std::mutex m_lock;
  TrialState m_state;
  std::map<std::string, SessionPtr> m_sessions;
  std::optional<std::string> m_terminate_reason;

  Inbox m_inbox;
  ThreadGroup m_readers;
  SessionPtr m_env;
  Json m_env_classes = Json::object();
  std::optional<DatalogWriter> m_writer;

  // Loop-thread state.
  std::uint64_t m_tick = 0;
  TickSample m_sample;
  RewardLedger m_ledger;
  std::optional<Envelope> m_env_observations;
  Json m_final_observations = Json::object();
  std::set<std::string> m_pending_actions;
  std::set<std::string> m_acks;
  bool m_env_lost = false;
  bool m_accepting = true;
};

}  // namespace tw

#endif
