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

#include "trial.h"

#include <spdlog/spdlog.h>

#include "trialworks/error.h"
#include "trialworks/schema.h"

namespace tw {
namespace {

using Clock = std::chrono::steady_clock;

constexpr Millis READ_POLL{200};

Json class_schemas(const ActorClass& cls) {
  return Json{{"observation", cls.observation_schema},
              {"action", cls.action_schema ? Json(*cls.action_schema) : Json(nullptr)}};
}

}  // namespace

void Inbox::push(InboxItem item) {
  {
    const std::lock_guard lg(m_lock);
    m_items.push_back(std::move(item));
  }
  m_cv.notify_one();
}

std::optional<InboxItem> Inbox::pop_until(Clock::time_point deadline) {
  std::unique_lock lk(m_lock);
  if (!m_cv.wait_until(lk, deadline, [this] { return !m_items.empty(); })) {
    return std::nullopt;
  }
  auto item = std::move(m_items.front());
  m_items.pop_front();
  return item;
}

Trial::Trial(Orchestrator& orchestrator, TrialParams params) : m_orch(orchestrator), m_params(std::move(params)) {
  m_sample.trial_id = m_params.trial_id;
}

TrialState Trial::state() const {
  const std::lock_guard lg(m_lock);
  return m_state;
}

void Trial::set_state(TrialState state) {
  const std::lock_guard lg(m_lock);
  m_state = std::move(state);
}

void Trial::transition(TrialStateKind state, std::optional<std::string> reason, Json detail) {
  m_orch.publish(*this, TrialState{state, std::move(reason)}, std::move(detail));
}

ParticipantId Trial::participant_for(const ActorSlot& slot) const {
  const auto* cls = find_actor_class(slot.class_name);
  const bool acts = cls != nullptr && cls->acts();
  return ParticipantId{acts ? ParticipantKind::actor : ParticipantKind::observer, slot.actor_name};
}

std::map<std::string, SessionPtr> Trial::sessions() const {
  const std::lock_guard lg(m_lock);
  return m_sessions;
}

void Trial::send_to(const SessionPtr& to, const Envelope& envelope) {
  if (!to || !to->connected) {
    return;
  }
  try {
    to->conn->send(envelope);
  }
  catch (const TransportError&) {
    to->connected = false;
  }
}

void Trial::send_error(const SessionPtr& to, const std::string& code, const std::string& detail) {
  send_to(to, Envelope{MsgType::error, id(), m_tick, ORCHESTRATOR_ID, {{"code", code}, {"detail", detail}}});
}

void Trial::run() {
  transition(TrialStateKind::initializing);
  try {
    setup();
  }
  catch (const std::exception& exc) {
    spdlog::warn("trial {} setup failed: {}", id(), exc.what());
    for (const auto& [name, session] : sessions()) {
      if (!session->is_client) {
        session->conn->close();
      }
    }
    if (m_env) {
      m_env->conn->close();
    }
    m_readers.join_all();
    transition(TrialStateKind::ended, "setup_failed", {{"detail", exc.what()}});
    return;
  }
  if (!required_clients_joined()) {
    transition(TrialStateKind::waiting_for_clients);
    auto reason = wait_for_clients();
    if (!reason.empty()) {
      finish(reason);
      return;
    }
  }
  transition(TrialStateKind::running);
  finish(loop());
}

void Trial::setup() {
  m_params = m_orch.registry().pre_trial_hook(m_params);
  const auto timeout = m_orch.options().setup_timeout;
  const Dialer dialer(m_orch.inproc());

  for (const auto& slot : m_params.actor_slots) {
    if (find_actor_class(slot.class_name) == nullptr) {
      throw InitError("unknown actor class " + slot.class_name);
    }
  }

  auto await_ack = [&](const ConnectionPtr& conn, const std::string& who) {
    const auto deadline = Clock::now() + timeout;
    while (Clock::now() < deadline) {
      auto reply = conn->receive(std::chrono::duration_cast<Millis>(deadline - Clock::now()) + Millis(1));
      if (!reply) {
        break;
      }
      if (reply->msg_type == MsgType::join_ack) {
        return *reply;
      }
      if (reply->msg_type == MsgType::error) {
        throw InitError(who + " refused the trial: " + reply->payload.value("detail", std::string()));
      }
    }
    throw InitError(who + " did not acknowledge the trial");
  };

  // Environment first: it declares the schemas every actor has to match.
  m_env = std::make_shared<Session>();
  m_env->id = ParticipantId{ParticipantKind::environment, "env"};
  m_env->conn = dialer.dial(*m_params.env_endpoint, timeout);
  Json actors = Json::array();
  for (const auto& slot : m_params.actor_slots) {
    actors.push_back({{"actor_name", slot.actor_name}, {"class_name", slot.class_name}});
  }
  m_env->conn->send(Envelope{MsgType::start_trial, id(), 0, ORCHESTRATOR_ID,
                             {{"trial_id", id()},
                              {"env_implementation", m_params.env_implementation},
                              {"env_config", m_params.env_config},
                              {"actors", actors},
                              {"max_tick", m_params.max_tick},
                              {"seed", m_params.seed}}});
  m_env_classes = await_ack(m_env->conn, "environment").payload.at("classes");
  for (const auto& slot : m_params.actor_slots) {
    const auto expected = class_schemas(*find_actor_class(slot.class_name));
    if (!m_env_classes.contains(slot.class_name) || m_env_classes.at(slot.class_name) != expected) {
      throw InitError("environment schemas disagree for class " + slot.class_name);
    }
  }

  for (const auto& slot : m_params.actor_slots) {
    if (slot.is_client) {
      continue;
    }
    const auto* cls = find_actor_class(slot.class_name);
    auto session = std::make_shared<Session>();
    session->id = participant_for(slot);
    session->acts = cls->acts();
    session->conn = dialer.dial(*slot.endpoint, timeout);
    session->conn->send(Envelope{MsgType::start_trial, id(), 0, ORCHESTRATOR_ID,
                                 {{"actor_name", slot.actor_name},
                                  {"class_name", slot.class_name},
                                  {"implementation", slot.implementation},
                                  {"seed", m_params.seed},
                                  {"env_config", m_params.env_config}}});
    {
      const std::lock_guard lg(m_lock);
      m_sessions[slot.actor_name] = session;
    }
    auto ack = await_ack(session->conn, slot.actor_name);
    const auto& payload = ack.payload;
    const Json action_schema = payload.value("action_schema", Json(nullptr));
    if (payload.value("class_name", std::string()) != slot.class_name ||
        payload.value("observation_schema", Json(nullptr)) != Json(cls->observation_schema) ||
        action_schema != (cls->action_schema ? Json(*cls->action_schema) : Json(nullptr))) {
      throw InitError("actor " + slot.actor_name + " does not speak class " + slot.class_name);
    }
  }

  start_reader(m_env);
  for (const auto& [name, session] : sessions()) {
    if (!session->is_client) {
      start_reader(session);
    }
  }

  std::filesystem::create_directories(m_orch.options().log_dir);
  m_writer.emplace(log_path_for(m_orch.options().log_dir, id()));
  m_writer->append_header(LogHeader{m_params, m_env_classes, m_orch.wall_time_ms()});
}

void Trial::start_reader(const SessionPtr& session) {
  m_readers.spawn([this, session] { read_loop(session); });
}

void Trial::read_loop(const SessionPtr& session) {
  try {
    while (session->active) {
      auto envelope = session->conn->receive(READ_POLL);
      if (envelope) {
        m_inbox.push(InboxItem{InboxItem::Kind::envelope, session, std::move(*envelope)});
      }
    }
  }
  catch (const TransportError&) {
    session->connected = false;
    m_inbox.push(InboxItem{InboxItem::Kind::disconnect, session, {}});
  }
  catch (const std::exception& exc) {
    spdlog::warn("trial {}: dropping {} after bad input: {}", id(), session->id.name, exc.what());
    session->connected = false;
    session->conn->close();
    m_inbox.push(InboxItem{InboxItem::Kind::disconnect, session, {}});
  }
}

bool Trial::required_clients_joined() const {
  const std::lock_guard lg(m_lock);
  for (const auto& slot : m_params.actor_slots) {
    if (!slot.is_client) {
      continue;
    }
    const auto* cls = find_actor_class(slot.class_name);
    if (cls == nullptr || !cls->acts()) {
      continue;
    }
    auto it = m_sessions.find(slot.actor_name);
    if (it == m_sessions.end() || !it->second->connected) {
      return false;
    }
  }
  return true;
}

SessionPtr Trial::join(const std::string& actor_name, const ConnectionPtr& conn) {
  const std::lock_guard lg(m_lock);
  if (m_state.state == TrialStateKind::terminating || m_state.state == TrialStateKind::ended) {
    throw JoinRefused("trial_ended", "trial " + id() + " is over");
  }
  const auto* slot = m_params.find_slot(actor_name);
  if (slot == nullptr || !slot->is_client) {
    throw JoinRefused("unknown_slot", "no client slot named " + actor_name);
  }
  auto it = m_sessions.find(actor_name);
  if (it != m_sessions.end() && it->second->connected) {
    throw JoinRefused("slot_taken", "slot " + actor_name + " is already joined");
  }
  const auto* cls = find_actor_class(slot->class_name);
  auto session = std::make_shared<Session>();
  session->id = participant_for(*slot);
  session->conn = conn;
  session->is_client = true;
  session->acts = cls != nullptr && cls->acts();
  conn->send(Envelope{MsgType::join_ack, id(), 0, ORCHESTRATOR_ID,
                      {{"ok", true},
                       {"actor_name", actor_name},
                       {"class_name", slot->class_name},
                       {"params", m_params},
                       {"observation_schema", cls->observation_schema},
                       {"action_schema", cls->action_schema ? Json(*cls->action_schema) : Json(nullptr)}}});
  m_sessions[actor_name] = session;
  m_inbox.push(InboxItem{InboxItem::Kind::wake, session, {}});
  return session;
}

void Trial::client_read(const SessionPtr& session) { read_loop(session); }

void Trial::request_terminate(const std::string& reason) {
  {
    const std::lock_guard lg(m_lock);
    if (m_state.state == TrialStateKind::ended) {
      throw NotFound("trial " + id() + " has ended");
    }
    if (m_terminate_reason || m_state.state == TrialStateKind::terminating) {
      return;
    }
    m_terminate_reason = reason;
  }
  m_inbox.push(InboxItem{});
}

std::string Trial::wait_for_clients() {
  const auto deadline = Clock::now() + m_orch.options().join_timeout;
  while (true) {
    {
      const std::lock_guard lg(m_lock);
      if (m_terminate_reason) {
        return *m_terminate_reason;
      }
    }
    if (required_clients_joined()) {
      return {};
    }
    auto item = m_inbox.pop_until(deadline);
    if (!item) {
      return "client_join_timeout";
    }
    if (!dispatch(*item)) {
      return "env_disconnected";
    }
  }
}

bool Trial::dispatch(InboxItem& item) {
  if (item.kind == InboxItem::Kind::wake) {
    return !m_env_lost;
  }
  const auto& session = item.session;
  if (item.kind == InboxItem::Kind::disconnect) {
    session->connected = false;
    if (session == m_env) {
      m_env_lost = true;
    }
    else {
      m_pending_actions.erase(session->id.name);
      if (m_accepting) {
        spdlog::info("trial {}: {} disconnected", id(), session->id.name);
      }
    }
    return !m_env_lost;
  }
  auto& envelope = item.envelope;
  switch (envelope.msg_type) {
  case MsgType::observation_set:
    if (session == m_env) {
      m_env_observations = std::move(envelope);
    }
    break;
  case MsgType::action:
    accept_action(session, envelope);
    break;
  case MsgType::reward:
    if (m_accepting) {
      route_reward(session, envelope);
    }
    break;
  case MsgType::message:
    if (m_accepting) {
      route_message(session, envelope);
    }
    break;
  case MsgType::trial_ended:
    m_acks.insert(session->id.name);
    break;
  case MsgType::error:
    spdlog::warn("trial {}: error from {}: {}", id(), session->id.name, envelope.payload.dump());
    break;
  case MsgType::heartbeat:
    break;
  default:
    send_error(session, "unexpected_message", std::string(to_string(envelope.msg_type)));
    break;
  }
  return !m_env_lost;
}

void Trial::accept_action(const SessionPtr& from, const Envelope& envelope) {
  const auto& name = from->id.name;
  if (from == m_env || !from->acts) {
    send_error(from, "unexpected_message", "participant does not act");
    return;
  }
  if (envelope.tick_id != m_tick || !m_pending_actions.contains(name)) {
    send_error(from, "stale_action", fmt::format("no action expected for tick {}", envelope.tick_id));
    return;
  }
  m_pending_actions.erase(name);
  const auto* slot = m_params.find_slot(name);
  const auto* cls = find_actor_class(slot->class_name);
  try {
    const auto& action = envelope.payload.at("action");
    validate_against_schema(action, *cls->action_schema);
    m_sample.actions[name] = TickAction{action, false};
  }
  catch (const SchemaViolation& exc) {
    send_error(from, "schema_violation", exc.path());
  }
  catch (const Json::exception& exc) {
    send_error(from, "schema_violation", "action");
  }
}

void Trial::route_reward(const SessionPtr& from, const Envelope& envelope) {
  Reward reward;
  try {
    reward = envelope.payload.get<Reward>();
    reward.source = from->id;
    reward.validate();
  }
  catch (const std::exception& exc) {
    send_error(from, "invalid_reward", exc.what());
    return;
  }
  if (m_params.find_slot(reward.target_actor) == nullptr) {
    send_error(from, "unknown_recipient", reward.target_actor);
    return;
  }
  if (reward.target_tick > m_tick) {
    send_error(from, "future_target", fmt::format("tick {} is ahead of {}", reward.target_tick, m_tick));
    return;
  }
  if (m_tick - reward.target_tick > m_params.retro_window) {
    spdlog::info("trial {}: reward from {} for tick {} outside the retro window at tick {}", id(), from->id.name,
                 reward.target_tick, m_tick);
    send_error(from, "retro_window_exceeded", fmt::format("tick {} is older than {} ticks", reward.target_tick, m_params.retro_window));
    return;
  }
  m_sample.rewards_received.push_back(reward);
  auto aggregated = m_ledger.add(reward);
  auto recipients = sessions();
  auto it = recipients.find(reward.target_actor);
  if (it != recipients.end()) {
    send_to(it->second, Envelope{MsgType::reward, id(), m_tick, ORCHESTRATOR_ID, {{"aggregated", aggregated}}});
  }
}

void Trial::route_message(const SessionPtr& from, const Envelope& envelope) {
  ParticipantId to;
  Json body;
  try {
    to = envelope.payload.at("to").get<ParticipantId>();
    body = envelope.payload.at("payload");
  }
  catch (const std::exception& exc) {
    send_error(from, "invalid_message", exc.what());
    return;
  }
  auto all = sessions();
  std::vector<std::pair<ParticipantId, SessionPtr>> recipients;
  if (to.kind == ParticipantKind::environment) {
    recipients.emplace_back(m_env->id, m_env);
  }
  else if ((to.kind == ParticipantKind::actor || to.kind == ParticipantKind::observer) && to.name == "*") {
    for (const auto& slot : m_params.actor_slots) {
      if (slot.actor_name == from->id.name && from != m_env) {
        continue;
      }
      auto it = all.find(slot.actor_name);
      recipients.emplace_back(participant_for(slot), it == all.end() ? nullptr : it->second);
    }
  }
  else if (const auto* slot = m_params.find_slot(to.name); slot != nullptr && to.kind != ParticipantKind::orchestrator) {
    auto it = all.find(slot->actor_name);
    recipients.emplace_back(participant_for(*slot), it == all.end() ? nullptr : it->second);
  }
  else {
    send_error(from, "unknown_recipient", to.name);
    return;
  }
  for (const auto& [recipient, session] : recipients) {
    send_to(session, Envelope{MsgType::message, id(), m_tick, from->id, {{"from", from->id}, {"payload", body}}});
    m_sample.messages.push_back(LoggedMessage{from->id, recipient, body});
  }
}

std::optional<std::string> Trial::await_env_observations(std::uint64_t expected_tick) {
  const auto deadline = Clock::now() + m_orch.options().env_timeout;
  while (!m_env_observations) {
    auto item = m_inbox.pop_until(deadline);
    if (!item) {
      spdlog::warn("trial {}: environment silent at tick {}", id(), m_tick);
      return "env_disconnected";
    }
    if (!dispatch(*item)) {
      return "env_disconnected";
    }
  }
  if (m_env_observations->tick_id != expected_tick) {
    spdlog::warn("trial {}: environment sent tick {} instead of {}", id(), m_env_observations->tick_id, expected_tick);
    return "env_disconnected";
  }
  return std::nullopt;
}

std::string Trial::loop() {
  if (auto failure = await_env_observations(m_tick)) {
    return *failure;
  }
  while (true) {
    auto observations = std::move(*m_env_observations);
    m_env_observations.reset();
    const auto& payload = observations.payload;
    m_final_observations = payload.value("observations", Json::object());
    if (payload.value("terminal", false)) {
      return "env_terminal";
    }
    if (m_tick >= m_params.max_tick) {
      return "max_tick";
    }
    {
      const std::lock_guard lg(m_lock);
      if (m_terminate_reason) {
        return *m_terminate_reason;
      }
    }

    // Fan-out: each actor gets its own observation only.
    auto live = sessions();
    m_pending_actions.clear();
    for (const auto& slot : m_params.actor_slots) {
      if (!m_final_observations.contains(slot.actor_name)) {
        spdlog::warn("trial {}: no observation for {} at tick {}", id(), slot.actor_name, m_tick);
        return "env_disconnected";
      }
      const auto& observation = m_final_observations.at(slot.actor_name);
      m_sample.observations[slot.actor_name] = observation;
      auto it = live.find(slot.actor_name);
      if (it == live.end() || !it->second->connected) {
        continue;
      }
      send_to(it->second, Envelope{MsgType::observation_set, id(), m_tick, ORCHESTRATOR_ID, {{"observation", observation}}});
      if (it->second->acts && it->second->connected) {
        m_pending_actions.insert(slot.actor_name);
      }
    }

    const auto deadline = Clock::now() + Millis(m_params.action_timeout_ms);
    while (!m_pending_actions.empty()) {
      auto item = m_inbox.pop_until(deadline);
      if (!item) {
        break;
      }
      if (!dispatch(*item)) {
        return "env_disconnected";
      }
    }
    m_pending_actions.clear();

    Json actions = Json::object();
    for (const auto& slot : m_params.actor_slots) {
      const auto* cls = find_actor_class(slot.class_name);
      if (!cls->acts()) {
        continue;
      }
      auto it = m_sample.actions.find(slot.actor_name);
      if (it == m_sample.actions.end()) {
        it = m_sample.actions.emplace(slot.actor_name, TickAction{cls->default_action, true}).first;
      }
      actions[slot.actor_name] = it->second.action;
    }
    send_to(m_env, Envelope{MsgType::action, id(), m_tick, ORCHESTRATOR_ID, {{"actions", std::move(actions)}}});

    // Rewards and messages for this tick arrive ahead of the next observations.
    if (auto failure = await_env_observations(m_tick + 1)) {
      return *failure;
    }
    try {
      m_writer->append_sample(m_sample);
    }
    catch (const LogIoError& exc) {
      spdlog::error("trial {}: {}", id(), exc.what());
    }
    ++m_tick;
    m_sample = TickSample{id(), m_tick, {}, {}, {}, {}};
  }
}

void Trial::finish(const std::string& reason) {
  transition(TrialStateKind::terminating, reason);
  m_accepting = false;
  auto live = sessions();
  std::set<std::string> awaited;
  for (const auto& [name, session] : live) {
    if (!session->connected) {
      continue;
    }
    const Json observation = m_final_observations.contains(name) ? m_final_observations.at(name) : Json(nullptr);
    send_to(session, Envelope{MsgType::end_trial, id(), m_tick, ORCHESTRATOR_ID, {{"reason", reason}, {"observation", observation}}});
    if (!session->is_client && session->connected) {
      awaited.insert(name);
    }
  }
  if (m_env && m_env->connected) {
    send_to(m_env, Envelope{MsgType::end_trial, id(), m_tick, ORCHESTRATOR_ID, {{"reason", reason}}});
    awaited.insert(m_env->id.name);
  }
  const auto deadline = Clock::now() + m_orch.options().setup_timeout;
  auto outstanding = [&] {
    for (const auto& name : awaited) {
      if (m_acks.contains(name)) {
        continue;
      }
      auto session = name == m_env->id.name ? m_env : live.at(name);
      if (session->connected) {
        return true;
      }
    }
    return false;
  };
  while (outstanding()) {
    auto item = m_inbox.pop_until(deadline);
    if (!item) {
      spdlog::warn("trial {}: not every participant acknowledged the end", id());
      break;
    }
    dispatch(*item);
  }

  for (const auto& [name, session] : live) {
    session->active = false;
    if (!session->is_client) {
      session->conn->close();
    }
    else if (session->connected) {
      send_to(session, Envelope{MsgType::trial_ended, id(), m_tick, ORCHESTRATOR_ID, {{"reason", reason}}});
    }
  }
  if (m_env) {
    m_env->active = false;
    m_env->conn->close();
  }
  m_readers.join_all();

  std::vector<std::string> actors;
  for (const auto& slot : m_params.actor_slots) {
    actors.push_back(slot.actor_name);
  }
  auto footer = make_footer(reason, m_tick, m_ledger, actors);
  if (m_writer) {
    try {
      m_writer->append_footer(footer);
    }
    catch (const LogIoError& exc) {
      spdlog::error("trial {}: {}", id(), exc.what());
    }
  }

  // Per-implementation trial total: mean over the acting actors running it.
  std::map<std::string, std::pair<double, int>> by_impl;
  for (const auto& slot : m_params.actor_slots) {
    const auto* cls = find_actor_class(slot.class_name);
    if (slot.implementation.empty() || cls == nullptr || !cls->acts()) {
      continue;
    }
    auto& [sum, count] = by_impl[slot.implementation];
    sum += footer.totals.at(slot.actor_name);
    ++count;
  }
  Json implementation_totals = Json::object();
  for (const auto& [impl, entry] : by_impl) {
    const double total = entry.first / entry.second;
    implementation_totals[impl] = total;
    m_orch.metrics()->record_trial_total(impl, total);
  }
  Json detail{{"ticks", m_tick},
              {"totals", footer.totals},
              {"implementation_totals", implementation_totals},
              {"log", m_writer ? m_writer->path().string() : std::string()}};
  transition(TrialStateKind::ended, reason, std::move(detail));
}

}  // namespace tw
