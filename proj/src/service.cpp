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

#include "trialworks/service.h"

#include <spdlog/spdlog.h>

#include "trialworks/arena.h"
#include "trialworks/error.h"
#include "trialworks/registry.h"
#include "trialworks/reward.h"
#include "trialworks/schema.h"

namespace tw {
namespace {

constexpr Millis START_TIMEOUT{10000};
constexpr Millis ACK_TIMEOUT{5000};
// Sessions give up on a silent orchestrator after this long.
constexpr Millis IDLE_TIMEOUT{120000};

Json schema_pair(const ActorClass& cls) {
  return Json{{"observation", cls.observation_schema},
              {"action", cls.action_schema ? Json(*cls.action_schema) : Json(nullptr)}};
}

}  // namespace

ServiceHost::ServiceHost(std::vector<ServiceOffer> offers, SessionHandler handler,
                         std::shared_ptr<InProcNetwork> inproc) :
    m_offers(std::move(offers)), m_handler(std::move(handler)), m_inproc(std::move(inproc)) {}

ServiceHost::~ServiceHost() { stop(); }

std::string ServiceHost::listen_tcp(const std::string& host, std::uint16_t port) {
  m_servers.push_back(std::make_unique<TcpServer>(host, port, [this](ConnectionPtr conn) { serve(std::move(conn)); }));
  m_endpoints.push_back(m_servers.back()->address());
  return m_endpoints.back();
}

std::string ServiceHost::listen_inproc(const std::string& name) {
  if (!m_inproc) {
    throw TransportError("no in-process network to listen on");
  }
  m_inproc->listen(name, [this](ConnectionPtr conn) { serve(std::move(conn)); });
  m_inproc_names.push_back(name);
  m_endpoints.push_back(std::string(INPROC_SCHEME) + name);
  return m_endpoints.back();
}

void ServiceHost::serve(ConnectionPtr conn) {
  try {
    auto start = conn->receive(START_TIMEOUT);
    if (!start || start->msg_type != MsgType::start_trial) {
      throw ProtocolError("session did not open with start_trial");
    }
    m_handler(*start, conn);
  }
  catch (const TransportError& exc) {
    spdlog::debug("service session closed: {}", exc.what());
  }
  catch (const std::exception& exc) {
    spdlog::warn("service session failed: {}", exc.what());
    try {
      conn->send(Envelope{MsgType::error, "", 0, {ParticipantKind::actor, ""}, {{"code", "setup_failed"}, {"detail", exc.what()}}});
    }
    catch (const TransportError&) {
    }
  }
  conn->close();
}

void ServiceHost::register_once(const ConnectionPtr& conn) {
  std::size_t expected = 0;
  for (const auto& offer : m_offers) {
    for (const auto& endpoint : m_endpoints) {
      conn->send(Envelope{MsgType::register_service, "", 0, {ParticipantKind::actor, offer.implementation},
                          {{"class_name", offer.class_name}, {"implementation", offer.implementation}, {"endpoint", endpoint}}});
      ++expected;
    }
  }
  for (std::size_t i = 0; i < expected; ++i) {
    auto reply = conn->receive(ACK_TIMEOUT);
    if (!reply) {
      throw TransportError("no register_ack from orchestrator");
    }
    if (reply->msg_type == MsgType::error) {
      throw ConflictError(reply->payload.value("detail", std::string("registration refused")));
    }
  }
}

void ServiceHost::register_with(const std::string& orchestrator_endpoint, Millis period) {
  if (m_endpoints.empty()) {
    throw TransportError("service host has no endpoint to register");
  }
  auto conn = Dialer(m_inproc).dial(orchestrator_endpoint);
  register_once(conn);
  conn->close();
  m_heartbeat = std::thread([this, orchestrator_endpoint, period] { heartbeat_loop(orchestrator_endpoint, period); });
}

void ServiceHost::heartbeat_loop(std::string orchestrator_endpoint, Millis period) {
  ConnectionPtr conn;
  std::unique_lock lk(m_lock);
  while (!m_cv.wait_for(lk, period, [this] { return m_stop; })) {
    lk.unlock();
    try {
      if (!conn || !conn->is_open()) {
        conn = Dialer(m_inproc).dial(orchestrator_endpoint);
      }
      register_once(conn);
    }
    catch (const std::exception& exc) {
      spdlog::warn("heartbeat to {} failed: {}", orchestrator_endpoint, exc.what());
      if (conn) {
        conn->close();
      }
      conn.reset();
    }
    lk.lock();
  }
  if (conn) {
    conn->close();
  }
}

void ServiceHost::stop() {
  {
    const std::lock_guard lg(m_lock);
    m_stop = true;
  }
  m_cv.notify_all();
  if (m_heartbeat.joinable()) {
    m_heartbeat.join();
  }
  for (auto& server : m_servers) {
    server->stop();
  }
  m_servers.clear();
  if (m_inproc) {
    for (const auto& name : m_inproc_names) {
      m_inproc->unlisten(name);
    }
  }
  m_inproc_names.clear();
}

std::vector<ServiceOffer> arena_offers() {
  return {ServiceOffer{std::string(ENVIRONMENT_CLASS), std::string(arena::IMPLEMENTATION)}};
}

void serve_arena_session(const Envelope& start, ConnectionPtr conn) {
  const auto& p = start.payload;
  const auto implementation = p.at("env_implementation").get<std::string>();
  if (implementation != arena::IMPLEMENTATION) {
    throw ProtocolError("unsupported environment implementation " + implementation);
  }
  const auto& trial_id = start.trial_id;
  const auto max_tick = p.value("max_tick", std::uint64_t{600});
  const auto config = arena::config_from_json(p.value("env_config", Json::object()), max_tick, p.value("seed", std::uint64_t{0}));

  std::vector<std::string> players;
  std::vector<std::string> observers;
  Json classes = Json::object();
  for (const auto& actor : p.at("actors")) {
    const auto name = actor.at("actor_name").get<std::string>();
    const auto class_name = actor.at("class_name").get<std::string>();
    if (class_name == PLAYER_CLASS) {
      players.push_back(name);
    }
    else if (class_name == OBSERVER_CLASS) {
      observers.push_back(name);
    }
    else {
      throw ProtocolError("arena has no actor class " + class_name);
    }
    classes[class_name] = schema_pair(*find_actor_class(class_name));
  }
  auto state = arena::arena_init(config, players);
  const auto& self = arena::ENV_PARTICIPANT;
  conn->send(Envelope{MsgType::join_ack, trial_id, 0, self, {{"classes", classes}}});

  auto send_observations = [&](bool terminal) {
    Json observations = Json::object();
    for (std::size_t i = 0; i < players.size(); ++i) {
      observations[players[i]] = arena::observe(state, static_cast<int>(i));
    }
    if (!observers.empty()) {
      const auto world = arena::world_state(state);
      for (const auto& name : observers) {
        observations[name] = world;
      }
    }
    conn->send(Envelope{MsgType::observation_set, trial_id, state.tick, self,
                        {{"observations", std::move(observations)}, {"terminal", terminal}}});
  };
  send_observations(false);

  while (true) {
    auto envelope = conn->receive(IDLE_TIMEOUT);
    if (!envelope) {
      spdlog::warn("arena session {} idle, closing", trial_id);
      return;
    }
    if (envelope->msg_type == MsgType::end_trial) {
      conn->send(Envelope{MsgType::trial_ended, trial_id, state.tick, self, Json::object()});
      return;
    }
    if (envelope->msg_type != MsgType::action) {
      continue;
    }
    if (envelope->tick_id != state.tick) {
      throw ProtocolError(fmt::format("action for tick {} while at tick {}", envelope->tick_id, state.tick));
    }
    std::map<std::string, arena::ArenaAction> actions;
    for (const auto& [name, action] : envelope->payload.at("actions").items()) {
      if (state.find_player(name) >= 0) {
        actions[name] = arena::action_from_json(action);
      }
    }
    const auto tick = state.tick;
    auto result = arena::arena_step(state, actions);
    for (const auto& reward : result.rewards) {
      conn->send(Envelope{MsgType::reward, trial_id, tick, self, reward});
    }
    send_observations(result.terminal);
  }
}

std::vector<ServiceOffer> agent_offers() {
  std::vector<ServiceOffer> offers;
  for (auto impl : {agents::RANDOM_IMPL, agents::HEURISTIC_IMPL, agents::REINFORCE_IMPL}) {
    offers.push_back(ServiceOffer{std::string(PLAYER_CLASS), std::string(impl)});
  }
  return offers;
}

AgentService::AgentService(std::shared_ptr<agents::ModelStore> model, EpisodeObserver observer) :
    m_model(std::move(model)), m_observer(std::move(observer)) {}

SessionHandler AgentService::handler() {
  return [this](const Envelope& start, ConnectionPtr conn) { serve(start, std::move(conn)); };
}

void AgentService::serve(const Envelope& start, ConnectionPtr conn) {
  const auto& p = start.payload;
  const auto implementation = p.at("implementation").get<std::string>();
  const auto actor_name = p.at("actor_name").get<std::string>();
  const auto class_name = p.value("class_name", std::string(PLAYER_CLASS));
  if (class_name != PLAYER_CLASS) {
    throw ProtocolError("agents only play class " + std::string(PLAYER_CLASS));
  }
  const bool is_random = implementation == agents::RANDOM_IMPL;
  const bool is_heuristic = implementation == agents::HEURISTIC_IMPL;
  const bool is_reinforce = implementation == agents::REINFORCE_IMPL;
  if (!is_random && !is_heuristic && !is_reinforce) {
    throw ProtocolError("unsupported agent implementation " + implementation);
  }
  const auto& trial_id = start.trial_id;
  const ParticipantId self{ParticipantKind::actor, actor_name};
  const auto hints = agents::ArenaHints::from_env_config(p.value("env_config", Json::object()));
  std::mt19937_64 rng(agents::actor_seed(p.value("seed", std::uint64_t{0}), actor_name));
  // Acting uses the weights current at trial start.
  const auto model = is_reinforce ? m_model->snapshot() : nullptr;

  conn->send(Envelope{MsgType::join_ack, trial_id, 0, self,
                      {{"class_name", class_name}, {"observation_schema", ARENA_OBS_SCHEMA}, {"action_schema", ARENA_ACTION_SCHEMA}}});

  EpisodeRecord record{trial_id, actor_name, implementation, 0, {}};
  std::vector<agents::EpisodeStep> steps;
  std::vector<std::uint64_t> step_ticks;

  while (true) {
    auto envelope = conn->receive(IDLE_TIMEOUT);
    if (!envelope) {
      spdlog::warn("agent session {}/{} idle, closing", trial_id, actor_name);
      return;
    }
    switch (envelope->msg_type) {
    case MsgType::observation_set: {
      const auto& observation = envelope->payload.at("observation");
      const auto tick = envelope->tick_id;
      record.ticks = tick + 1;
      arena::ArenaAction action;
      if (is_random) {
        action = agents::random_act(observation, rng);
      }
      else if (is_heuristic) {
        action = agents::heuristic_act(observation, hints);
      }
      else {
        auto decision = agents::reinforce_act(*model, observation, rng, hints);
        action = decision.action;
        if (observation.at("self").at("alive").get<bool>()) {
          steps.push_back(agents::EpisodeStep{decision.features, decision.cell, decision.log_prob, 0.0});
          step_ticks.push_back(tick);
        }
      }
      conn->send(Envelope{MsgType::action, trial_id, tick, self, {{"action", arena::action_to_json(action)}}});
      break;
    }
    case MsgType::reward: {
      auto aggregated = envelope->payload.at("aggregated").get<AggregatedReward>();
      record.rewards[aggregated.target_tick] = aggregated.value;
      break;
    }
    case MsgType::end_trial: {
      if (is_reinforce) {
        for (std::size_t i = 0; i < steps.size(); ++i) {
          auto it = record.rewards.find(step_ticks[i]);
          steps[i].reward = it == record.rewards.end() ? 0.0 : it->second;
        }
        m_model->update(steps);
      }
      if (m_observer) {
        m_observer(record);
      }
      conn->send(Envelope{MsgType::trial_ended, trial_id, envelope->tick_id, self, Json::object()});
      return;
    }
    case MsgType::error:
      spdlog::debug("agent {} got error: {}", actor_name, envelope->payload.dump());
      break;
    default:
      break;
    }
  }
}

}  // namespace tw
