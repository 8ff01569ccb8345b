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

#include "trialworks/orchestrator.h"

#include <spdlog/spdlog.h>

#include "trial.h"
#include "trialworks/websocket.h"

namespace tw {
namespace {

constexpr Millis CONTROL_POLL{500};

Envelope error_envelope(const std::string& trial_id, Json payload) {
  return Envelope{MsgType::error, trial_id, 0, ORCHESTRATOR_ID, std::move(payload)};
}

}  // namespace

void to_json(Json& json, const TrialEvent& event) {
  json = Json{{"trial_id", event.trial_id}, {"state", to_string(event.state.state)}};
  if (event.state.reason) {
    json["reason"] = *event.state.reason;
  }
  if (!event.detail.empty()) {
    json["detail"] = event.detail;
  }
}

Orchestrator::Orchestrator(OrchestratorOptions options, std::shared_ptr<InProcNetwork> inproc) :
    m_options(std::move(options)),
    m_inproc(inproc ? std::move(inproc) : std::make_shared<InProcNetwork>()),
    m_registry(m_options.liveness_window),
    m_metrics(std::make_shared<Metrics>(m_options.metrics_threshold)) {}

Orchestrator::~Orchestrator() { shutdown(); }

std::int64_t Orchestrator::wall_time_ms() const {
  if (m_options.wall_clock) {
    return m_options.wall_clock();
  }
  return std::chrono::duration_cast<Millis>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string Orchestrator::start_trial(TrialParams params, WatchCallback watch) {
  if (m_stopping) {
    throw Error("orchestrator is shutting down");
  }
  std::shared_ptr<Trial> trial;
  {
    const std::lock_guard lg(m_trials_lock);
    if (params.trial_id.empty()) {
      do {
        params.trial_id = fmt::format("trial-{:06d}", ++m_trial_counter);
      } while (m_trials.contains(params.trial_id));
    }
    params.validate();
    if (m_trials.contains(params.trial_id)) {
      throw InvalidParams("trial_id");
    }
    trial = std::make_shared<Trial>(*this, params);
    m_trials.emplace(params.trial_id, trial);
  }
  {
    const std::lock_guard lg(m_watch_lock);
    if (watch) {
      m_watchers.push_back(Watcher{m_next_watch++, params.trial_id, std::move(watch)});
    }
  }
  publish(*trial, TrialState{TrialStateKind::pending, std::nullopt});
  m_trial_threads.spawn([trial] { trial->run(); });
  return params.trial_id;
}

std::shared_ptr<Trial> Orchestrator::find_trial(const std::string& trial_id) const {
  const std::lock_guard lg(m_trials_lock);
  auto it = m_trials.find(trial_id);
  if (it == m_trials.end()) {
    throw NotFound("unknown trial " + trial_id);
  }
  return it->second;
}

void Orchestrator::terminate_trial(const std::string& trial_id, const std::string& reason) {
  find_trial(trial_id)->request_terminate(reason);
}

TrialState Orchestrator::trial_state(const std::string& trial_id) const { return find_trial(trial_id)->state(); }

std::optional<TrialState> Orchestrator::wait_until_ended(const std::string& trial_id, Millis timeout) const {
  auto trial = find_trial(trial_id);
  std::unique_lock lk(m_watch_lock);
  if (!m_state_cv.wait_for(lk, timeout, [&] { return trial->state().state == TrialStateKind::ended; })) {
    return std::nullopt;
  }
  return trial->state();
}

std::vector<std::string> Orchestrator::trial_ids() const {
  const std::lock_guard lg(m_trials_lock);
  std::vector<std::string> ids;
  for (const auto& [id, trial] : m_trials) {
    ids.push_back(id);
  }
  return ids;
}

void Orchestrator::publish(Trial& trial, TrialState state, Json detail) {
  const std::lock_guard lg(m_watch_lock);
  trial.set_state(state);
  const TrialEvent event{trial.id(), state, std::move(detail)};
  const bool ended = state.state == TrialStateKind::ended;
  std::erase_if(m_watchers, [&](const Watcher& watcher) {
    if (watcher.filter != WATCH_ALL && watcher.filter != trial.id()) {
      return false;
    }
    try {
      watcher.callback(event);
    }
    catch (const std::exception& exc) {
      spdlog::debug("dropping watcher {}: {}", watcher.id, exc.what());
      return true;
    }
    return ended && watcher.filter == trial.id();
  });
  m_state_cv.notify_all();
}

WatchId Orchestrator::watch_trials(const std::string& filter, WatchCallback callback) {
  std::vector<std::shared_ptr<Trial>> matching;
  if (filter == WATCH_ALL) {
    const std::lock_guard lg(m_trials_lock);
    for (const auto& [id, trial] : m_trials) {
      matching.push_back(trial);
    }
  }
  else {
    matching.push_back(find_trial(filter));
  }
  const std::lock_guard lg(m_watch_lock);
  for (const auto& trial : matching) {
    callback(TrialEvent{trial->id(), trial->state(), Json::object()});
  }
  const WatchId id = m_next_watch++;
  // A watch on one trial that has already ended has nothing left to report.
  if (filter == WATCH_ALL || matching.front()->state().state != TrialStateKind::ended) {
    m_watchers.push_back(Watcher{id, filter, std::move(callback)});
  }
  return id;
}

void Orchestrator::unwatch(WatchId id) {
  const std::lock_guard lg(m_watch_lock);
  std::erase_if(m_watchers, [id](const Watcher& watcher) { return watcher.id == id; });
}

void Orchestrator::handle_connection(ConnectionPtr conn) {
  std::vector<WatchId> watches;
  auto watch_sender = [conn](const TrialEvent& event) {
    conn->send(Envelope{MsgType::trial_state, event.trial_id, 0, ORCHESTRATOR_ID, event});
  };
  auto reply = [&](const Envelope& envelope) { conn->send(envelope); };
  try {
    while (conn->is_open() && !m_stopping) {
      std::optional<Envelope> received;
      try {
        received = conn->receive(CONTROL_POLL);
      }
      catch (const ProtocolError& exc) {
        reply(error_envelope("", {{"code", "protocol_error"}, {"detail", exc.what()}}));
        conn->close();
        break;
      }
      if (!received) {
        continue;
      }
      const auto& envelope = *received;
      const auto& payload = envelope.payload;
      const Json request_id = payload.value("request_id", Json(nullptr));
      switch (envelope.msg_type) {
      case MsgType::register_service:
      case MsgType::heartbeat: {
        if (envelope.msg_type == MsgType::heartbeat && !payload.contains("endpoint")) {
          reply(Envelope{MsgType::heartbeat, "", 0, ORCHESTRATOR_ID, Json::object()});
          break;
        }
        try {
          m_registry.register_service(payload.at("class_name").get<std::string>(),
                                      payload.at("implementation").get<std::string>(),
                                      payload.at("endpoint").get<std::string>());
          reply(Envelope{envelope.msg_type == MsgType::heartbeat ? MsgType::heartbeat : MsgType::register_ack, "", 0,
                         ORCHESTRATOR_ID, {{"liveness_window_ms", m_registry.liveness_window().count()}}});
        }
        catch (const ConflictError& exc) {
          reply(error_envelope("", {{"code", "conflict"}, {"detail", exc.what()}}));
        }
        catch (const std::exception& exc) {
          reply(error_envelope("", {{"code", "invalid_params"}, {"detail", exc.what()}}));
        }
        break;
      }
      case MsgType::start_trial: {
        try {
          auto params = parse_trial_params(payload.contains("params") ? payload.at("params") : payload);
          const bool watch = payload.value("watch", false);
          auto trial_id = start_trial(std::move(params), watch ? WatchCallback(watch_sender) : WatchCallback());
          reply(Envelope{MsgType::trial_state, trial_id, 0, ORCHESTRATOR_ID,
                         {{"request_id", request_id}, {"trial_id", trial_id}, {"state", "pending"}}});
        }
        catch (const InvalidParams& exc) {
          reply(error_envelope(envelope.trial_id, {{"code", "invalid_params"}, {"field", exc.field()}, {"request_id", request_id}}));
        }
        catch (const Error& exc) {
          reply(error_envelope(envelope.trial_id, {{"code", "unavailable"}, {"detail", exc.what()}, {"request_id", request_id}}));
        }
        break;
      }
      case MsgType::end_trial: {
        try {
          terminate_trial(envelope.trial_id, payload.value("reason", std::string("client_requested")));
          auto state = trial_state(envelope.trial_id);
          reply(Envelope{MsgType::trial_state, envelope.trial_id, 0, ORCHESTRATOR_ID,
                         TrialEvent{envelope.trial_id, state, {{"request_id", request_id}}}});
        }
        catch (const NotFound& exc) {
          reply(error_envelope(envelope.trial_id, {{"code", "not_found"}, {"detail", exc.what()}, {"request_id", request_id}}));
        }
        break;
      }
      case MsgType::trial_state: {
        try {
          if (payload.contains("watch")) {
            const auto filter = payload.at("watch").get<std::string>();
            watches.push_back(watch_trials(filter, watch_sender));
            // Marks the end of the snapshot.
            reply(Envelope{MsgType::trial_state, "", 0, ORCHESTRATOR_ID, {{"watching", filter}, {"trials", trial_ids()}}});
          }
          else if (payload.contains("unwatch")) {
            for (auto id : watches) {
              unwatch(id);
            }
            watches.clear();
          }
          else {
            const auto trial_id = payload.value("query", envelope.trial_id);
            reply(Envelope{MsgType::trial_state, trial_id, 0, ORCHESTRATOR_ID,
                           TrialEvent{trial_id, trial_state(trial_id), Json::object()}});
          }
        }
        catch (const NotFound& exc) {
          reply(error_envelope(envelope.trial_id, {{"code", "not_found"}, {"detail", exc.what()}}));
        }
        break;
      }
      case MsgType::join_trial: {
        std::shared_ptr<Trial> trial;
        SessionPtr session;
        try {
          try {
            trial = find_trial(envelope.trial_id);
          }
          catch (const NotFound& exc) {
            throw JoinRefused("not_found", exc.what());
          }
          session = trial->join(payload.at("actor_name").get<std::string>(), conn);
        }
        catch (const JoinRefused& exc) {
          reply(Envelope{MsgType::join_ack, envelope.trial_id, 0, ORCHESTRATOR_ID,
                         {{"ok", false}, {"code", exc.code()}, {"detail", exc.what()}}});
          break;
        }
        catch (const Json::exception& exc) {
          reply(error_envelope(envelope.trial_id, {{"code", "invalid_params"}, {"field", "actor_name"}}));
          break;
        }
        trial->client_read(session);
        break;
      }
      default:
        reply(error_envelope(envelope.trial_id, {{"code", "unexpected_message"}, {"detail", std::string(to_string(envelope.msg_type))}}));
        break;
      }
    }
  }
  catch (const TransportError& exc) {
    spdlog::debug("connection {} closed: {}", conn->peer(), exc.what());
  }
  for (auto id : watches) {
    unwatch(id);
  }
}

std::uint16_t Orchestrator::listen_tcp(const std::string& host, std::uint16_t port) {
  m_servers.push_back(std::make_unique<TcpServer>(host, port, [this](ConnectionPtr conn) { handle_connection(std::move(conn)); }));
  return m_servers.back()->port();
}

std::uint16_t Orchestrator::listen_ws(const std::string& host, std::uint16_t port) {
  m_servers.push_back(std::make_unique<TcpServer>(
      host, port, [this](ConnectionPtr conn) { handle_connection(std::move(conn)); },
      [](Socket socket) -> ConnectionPtr {
        try {
          return websocket_accept(std::move(socket));
        }
        catch (const std::exception& exc) {
          spdlog::debug("websocket handshake failed: {}", exc.what());
          return nullptr;
        }
      }));
  return m_servers.back()->port();
}

void Orchestrator::listen_inproc(const std::string& name) {
  m_inproc->listen(name, [this](ConnectionPtr conn) { handle_connection(std::move(conn)); });
  m_inproc_names.push_back(name);
}

void Orchestrator::shutdown() {
  if (m_stopping.exchange(true)) {
    return;
  }
  for (const auto& id : trial_ids()) {
    try {
      terminate_trial(id, "orchestrator_shutdown");
    }
    catch (const NotFound&) {
    }
  }
  m_trial_threads.join_all();
  for (auto& server : m_servers) {
    server->stop();
  }
  for (const auto& name : m_inproc_names) {
    m_inproc->unlisten(name);
  }
}

}  // namespace tw
