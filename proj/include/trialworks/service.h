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

#ifndef TRIALWORKS_SERVICE_H
#define TRIALWORKS_SERVICE_H

#include <atomic>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "trialworks/agents.h"
#include "trialworks/transport.h"

namespace tw {

// Called once per dialed session with the opening start_trial envelope.
using SessionHandler = std::function<void(const Envelope& start, ConnectionPtr conn)>;

struct ServiceOffer {
  std::string class_name;
  std::string implementation;
};

// Serves trial sessions on one or more endpoints and keeps every (offer, endpoint) pair
// registered with an orchestrator.
class ServiceHost {
public:
  ServiceHost(std::vector<ServiceOffer> offers, SessionHandler handler, std::shared_ptr<InProcNetwork> inproc = nullptr);
  ~ServiceHost();
  ServiceHost(const ServiceHost&) = delete;
  ServiceHost& operator=(const ServiceHost&) = delete;

  // Returns the endpoint string peers should dial.
  std::string listen_tcp(const std::string& host, std::uint16_t port);
  std::string listen_inproc(const std::string& name);

  // Registers synchronously (throws on refusal) then re-registers every `period` as heartbeat.
  void register_with(const std::string& orchestrator_endpoint, Millis period = Millis(2000));
  void stop();

  const std::vector<std::string>& endpoints() const { return m_endpoints; }

private:
  void serve(ConnectionPtr conn);
  void register_once(const ConnectionPtr& conn);
  void heartbeat_loop(std::string orchestrator_endpoint, Millis period);

  std::vector<ServiceOffer> m_offers;
  SessionHandler m_handler;
  std::shared_ptr<InProcNetwork> m_inproc;
  std::vector<std::unique_ptr<TcpServer>> m_servers;
  std::vector<std::string> m_inproc_names;
  std::vector<std::string> m_endpoints;

  std::mutex m_lock;
  std::condition_variable m_cv;
  bool m_stop = false;
  std::thread m_heartbeat;
};

// Environment sessions for the arena ("quack_arena_v1").
void serve_arena_session(const Envelope& start, ConnectionPtr conn);
std::vector<ServiceOffer> arena_offers();

// What an agent saw during one trial, reported when the trial ends.
struct EpisodeRecord {
  std::string trial_id;
  std::string actor_name;
  std::string implementation;
  std::uint64_t ticks = 0;
  // Latest aggregated value per target tick, as pushed online.
  std::map<std::uint64_t, double> rewards;
};

using EpisodeObserver = std::function<void(const EpisodeRecord&)>;

// Player sessions for random_v1, heuristic_v1 and reinforce_v1. All reinforce sessions share
// one model; it learns from each completed episode before the session acknowledges the end.
class AgentService {
public:
  explicit AgentService(std::shared_ptr<agents::ModelStore> model = std::make_shared<agents::ModelStore>(),
                        EpisodeObserver observer = {});

  void serve(const Envelope& start, ConnectionPtr conn);
  SessionHandler handler();
  const std::shared_ptr<agents::ModelStore>& model() const { return m_model; }

private:
  std::shared_ptr<agents::ModelStore> m_model;
  EpisodeObserver m_observer;
};

std::vector<ServiceOffer> agent_offers();

}  // namespace tw

#endif
