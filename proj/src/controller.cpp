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

#include "trialworks/controller.h"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>

#include "trialworks/datalog.h"
#include "trialworks/error.h"
#include "trialworks/orchestrator.h"

namespace tw::cli {
namespace {

const ParticipantId CONTROLLER_ID{ParticipantKind::controller, "tw"};

// Reply or event read failures that end a command.
class ControlFailure : public Error {
public:
  ControlFailure(int code, const std::string& what) : Error(what), m_code(code) {}
  int code() const { return m_code; }

private:
  int m_code;
};

class Channel {
public:
  explicit Channel(const ControllerOptions& options) : m_options(options) {
    try {
      m_conn = Dialer(options.inproc).dial(options.orchestrator, options.connect_timeout);
    }
    catch (const TransportError& exc) {
      throw ControlFailure(EXIT_CONNECTION_REFUSED, fmt::format("cannot reach orchestrator at {}: {}", options.orchestrator, exc.what()));
    }
  }
  ~Channel() { m_conn->close(); }

  void send(MsgType type, const std::string& trial_id, Json payload) {
    try {
      m_conn->send(Envelope{type, trial_id, 0, CONTROLLER_ID, std::move(payload)});
    }
    catch (const TransportError& exc) {
      throw ControlFailure(EXIT_CONNECTION_REFUSED, fmt::format("orchestrator connection lost: {}", exc.what()));
    }
  }

  Envelope next() {
    try {
      auto envelope = m_conn->receive(m_options.idle_timeout);
      if (!envelope) {
        throw ControlFailure(EXIT_USAGE, "timed out waiting for the orchestrator");
      }
      return *envelope;
    }
    catch (const TransportError& exc) {
      throw ControlFailure(EXIT_CONNECTION_REFUSED, fmt::format("orchestrator connection lost: {}", exc.what()));
    }
  }

private:
  const ControllerOptions& m_options;
  ConnectionPtr m_conn;
};

bool is_event(const Envelope& envelope) {
  return envelope.msg_type == MsgType::trial_state && envelope.payload.contains("state") &&
         !envelope.payload.contains("request_id") && envelope.payload.contains("trial_id");
}

std::string event_line(const Json& payload) {
  auto line = fmt::format("{} {}", payload.at("trial_id").get<std::string>(), payload.at("state").get<std::string>());
  if (payload.contains("reason")) {
    line += " " + payload.at("reason").get<std::string>();
  }
  return line;
}

void print_line(std::ostream& stream, const std::string& line) {
  stream << line << '\n';
  stream.flush();
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  }
  catch (const ControlFailure& exc) {
    print_line(err, exc.what());
    return exc.code();
  }
  catch (const InvalidParams& exc) {
    print_line(err, fmt::format("invalid config: {}", exc.field()));
    return EXIT_INVALID_CONFIG;
  }
}

}  // namespace

TrialParams load_trial_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InvalidParams("config");
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  Json json;
  try {
    json = Json::parse(buffer.str());
  }
  catch (const Json::parse_error&) {
    throw InvalidParams("config");
  }
  return parse_trial_params(json);
}

int cmd_start(const std::filesystem::path& config, const ControllerOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    auto params = load_trial_config(config);
    Channel channel(options);
    channel.send(MsgType::start_trial, params.trial_id, {{"params", params}, {"request_id", 0}});
    while (true) {
      auto reply = channel.next();
      if (reply.msg_type == MsgType::error) {
        if (reply.payload.value("code", "") == "invalid_params") {
          throw InvalidParams(reply.payload.value("field", ""));
        }
        throw ControlFailure(EXIT_USAGE, reply.payload.value("detail", std::string("start refused")));
      }
      if (reply.msg_type == MsgType::trial_state && reply.payload.contains("request_id")) {
        print_line(out, reply.payload.at("trial_id").get<std::string>());
        return EXIT_OK;
      }
    }
  });
}

int cmd_campaign(const std::filesystem::path& config, const CampaignOptions& campaign, const ControllerOptions& options,
                 std::ostream& out, std::ostream& err, CampaignReport* report) {
  return guarded(err, [&] { return run_campaign(load_trial_config(config), campaign, options, out, err, report); });
}

int run_campaign(const TrialParams& base, const CampaignOptions& campaign, const ControllerOptions& options,
                 std::ostream& out, std::ostream& err, CampaignReport* report) {
  return guarded(err, [&] {
    if (campaign.parallel < 1 || campaign.trials < 1) {
      throw ControlFailure(EXIT_USAGE, "--parallel and --trials must be at least 1");
    }
    base.validate();
    Channel channel(options);
    CampaignReport local;
    CampaignReport& result = report != nullptr ? *report : local;
    result = CampaignReport{};
    result.trials.resize(campaign.trials);

    // Trial id -> campaign index, learned from start replies.
    std::map<std::string, std::size_t> index_of;
    // Ended events that arrived ahead of their start reply.
    std::map<std::string, Json> early;
    std::vector<bool> done(campaign.trials, false);
    std::size_t next_to_record = 0;
    Metrics metrics(campaign.threshold);
    std::size_t in_flight = 0;
    bool failed = false;

    auto start_next = [&] {
      const auto index = result.started++;
      auto params = base;
      params.seed = campaign.base_seed + index;
      if (!base.trial_id.empty()) {
        params.trial_id = fmt::format("{}-{:05d}", base.trial_id, index);
      }
      result.trials[index].seed = params.seed;
      channel.send(MsgType::start_trial, params.trial_id, {{"params", params}, {"request_id", index}, {"watch", true}});
      ++in_flight;
      result.max_in_flight = std::max(result.max_in_flight, in_flight);
    };
    auto record_ended = [&](std::size_t index, const Json& event) {
      auto& trial = result.trials[index];
      trial.end_reason = event.value("reason", "");
      const auto detail = event.value("detail", Json::object());
      trial.implementation_totals = detail.value("implementation_totals", std::map<std::string, double>{});
      trial.log_path = detail.value("log", "");
      done[index] = true;
      --in_flight;
      ++result.ended;
      print_line(err, event_line(event));
      if (trial.end_reason == "setup_failed") {
        failed = true;
      }
      while (next_to_record < done.size() && done[next_to_record]) {
        for (const auto& [impl, total] : result.trials[next_to_record].implementation_totals) {
          metrics.record_trial_total(impl, total);
        }
        ++next_to_record;
      }
    };

    while (result.started < campaign.trials && in_flight < campaign.parallel) {
      start_next();
    }
    while (result.ended < result.started) {
      auto envelope = channel.next();
      const auto& payload = envelope.payload;
      if (envelope.msg_type == MsgType::error) {
        if (payload.value("code", "") == "invalid_params") {
          throw InvalidParams(payload.value("field", ""));
        }
        throw ControlFailure(EXIT_SETUP_FAILED, fmt::format("campaign aborted: {}", payload.dump()));
      }
      if (envelope.msg_type != MsgType::trial_state) {
        continue;
      }
      if (payload.contains("request_id")) {
        const auto index = payload.at("request_id").get<std::size_t>();
        const auto trial_id = payload.at("trial_id").get<std::string>();
        result.trials[index].trial_id = trial_id;
        index_of[trial_id] = index;
        if (auto it = early.find(trial_id); it != early.end()) {
          record_ended(index, it->second);
          early.erase(it);
        }
      }
      else if (is_event(envelope) && payload.at("state") == "ended") {
        const auto trial_id = payload.at("trial_id").get<std::string>();
        if (auto it = index_of.find(trial_id); it != index_of.end()) {
          record_ended(it->second, payload);
        }
        else {
          early[trial_id] = payload;
        }
      }
      else {
        continue;
      }
      if (failed) {
        throw ControlFailure(EXIT_SETUP_FAILED, "campaign aborted: a trial failed setup");
      }
      while (result.started < campaign.trials && in_flight < campaign.parallel) {
        start_next();
      }
    }

    result.metrics = metrics.snapshot();
    print_line(out, fmt::format("campaign trials {} ended {} parallel {}", result.started, result.ended, campaign.parallel));
    out << format_metrics_table(result.metrics);
    out.flush();
    return EXIT_OK;
  });
}

int cmd_watch(const std::optional<std::string>& trial_id, std::optional<std::size_t> count,
              const ControllerOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Channel channel(options);
    const std::string filter = trial_id.value_or(std::string(WATCH_ALL));
    channel.send(MsgType::trial_state, "", {{"watch", filter}});
    std::map<std::string, bool> ended;
    std::size_t ended_events = 0;
    bool snapshot_done = false;
    auto finished = [&] {
      if (count) {
        return ended_events >= *count;
      }
      if (!snapshot_done) {
        return false;
      }
      return std::all_of(ended.begin(), ended.end(), [](const auto& entry) { return entry.second; });
    };
    while (!finished()) {
      auto envelope = channel.next();
      const auto& payload = envelope.payload;
      if (envelope.msg_type == MsgType::error) {
        if (payload.value("code", "") == "not_found") {
          throw ControlFailure(EXIT_NOT_FOUND, fmt::format("unknown trial {}", filter));
        }
        throw ControlFailure(EXIT_USAGE, payload.dump());
      }
      if (envelope.msg_type != MsgType::trial_state) {
        continue;
      }
      if (payload.contains("watching")) {
        for (const auto& id : payload.value("trials", std::vector<std::string>{})) {
          if (filter == WATCH_ALL || id == filter) {
            ended.try_emplace(id, false);
          }
        }
        snapshot_done = true;
        continue;
      }
      if (!is_event(envelope)) {
        continue;
      }
      print_line(out, event_line(payload));
      const bool is_ended = payload.at("state") == "ended";
      ended[payload.at("trial_id").get<std::string>()] = is_ended;
      if (is_ended) {
        ++ended_events;
      }
    }
    return EXIT_OK;
  });
}

int cmd_terminate(const std::string& trial_id, const ControllerOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Channel channel(options);
    channel.send(MsgType::end_trial, trial_id, {{"reason", "client_requested"}});
    auto reply = channel.next();
    if (reply.msg_type == MsgType::error) {
      throw ControlFailure(EXIT_NOT_FOUND, fmt::format("unknown or ended trial {}", trial_id));
    }
    channel.send(MsgType::trial_state, "", {{"watch", trial_id}});
    while (true) {
      auto envelope = channel.next();
      if (envelope.msg_type == MsgType::error) {
        throw ControlFailure(EXIT_NOT_FOUND, fmt::format("unknown trial {}", trial_id));
      }
      if (is_event(envelope) && envelope.payload.at("state") == "ended") {
        print_line(out, event_line(envelope.payload));
        return EXIT_OK;
      }
    }
  });
}

int cmd_replay(const std::filesystem::path& log, ReplayMode mode, const std::string& actor, std::ostream& out,
               std::ostream& err) {
  ReplayResult result;
  try {
    if (!std::filesystem::exists(log)) {
      print_line(err, fmt::format("cannot read {}", log.string()));
      return EXIT_CORRUPT_LOG;
    }
    result = replay(log);
  }
  catch (const ReplayError& exc) {
    print_line(err, fmt::format("corrupt log at offset {}: {}", exc.offset(), exc.what()));
    return EXIT_CORRUPT_LOG;
  }
  catch (const std::exception& exc) {
    print_line(err, fmt::format("cannot replay {}: {}", log.string(), exc.what()));
    return EXIT_CORRUPT_LOG;
  }
  if (!result.header) {
    print_line(err, fmt::format("empty log {}", log.string()));
    return EXIT_CORRUPT_LOG;
  }
  std::vector<std::string> actors;
  for (const auto& slot : result.header->params.actor_slots) {
    actors.push_back(slot.actor_name);
  }
  if (mode == ReplayMode::summary) {
    print_line(out, fmt::format("trial {}", result.header->params.trial_id));
    print_line(out, fmt::format("ticks {}", result.samples.size()));
    print_line(out, fmt::format("end_reason {}", result.footer ? result.footer->end_reason : std::string("truncated")));
    for (const auto& name : actors) {
      print_line(out, fmt::format("total {} {:.6f}", name, result.total(name)));
    }
    return EXIT_OK;
  }
  if (std::find(actors.begin(), actors.end(), actor) == actors.end()) {
    print_line(err, fmt::format("no actor {} in {}", actor, log.string()));
    return EXIT_USAGE;
  }
  for (const auto& [key, aggregated] : result.aggregates) {
    if (key.first != actor) {
      continue;
    }
    print_line(out, fmt::format("{} {:.6f} {:.6f} {}", key.second, aggregated.value, aggregated.total_confidence,
                                aggregated.sources.size()));
  }
  return EXIT_OK;
}

int cmd_metrics(const std::string& endpoint, std::ostream& out, std::ostream& err) {
  HostPort address;
  try {
    address = parse_host_port(endpoint);
  }
  catch (const TransportError& exc) {
    print_line(err, exc.what());
    return EXIT_USAGE;
  }
  httplib::Client client(address.host, address.port);
  client.set_connection_timeout(2);
  auto response = client.Get("/metrics");
  if (!response) {
    print_line(err, fmt::format("cannot reach metrics endpoint {}", endpoint));
    return EXIT_CONNECTION_REFUSED;
  }
  if (response->status != 200) {
    print_line(err, fmt::format("metrics endpoint answered {}", response->status));
    return EXIT_USAGE;
  }
  out << response->body;
  out.flush();
  return EXIT_OK;
}

}  // namespace tw::cli
