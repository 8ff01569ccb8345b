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

#include "trialworks/datalog.h"

#include <random>

#include <spdlog/spdlog.h>

#include "trialworks/error.h"

namespace tw {
namespace {

const ParticipantId LOGGER_ID{ParticipantKind::orchestrator, "orchestrator"};

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw LogIoError("cannot open " + path.string());
  }
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

void to_json(Json& json, const TickSample& sample) {
  Json actions = Json::object();
  for (const auto& [actor, action] : sample.actions) {
    actions[actor] = Json{{"action", action.action}, {"defaulted", action.defaulted}};
  }
  Json messages = Json::array();
  for (const auto& message : sample.messages) {
    messages.push_back(Json{{"from", message.from}, {"to", message.to}, {"payload", message.payload}});
  }
  json = Json{{"trial_id", sample.trial_id},
              {"tick_id", sample.tick_id},
              {"observations", sample.observations},
              {"actions", std::move(actions)},
              {"rewards", sample.rewards_received},
              {"messages", std::move(messages)}};
}

void from_json(const Json& json, TickSample& sample) {
  sample.trial_id = json.at("trial_id").get<std::string>();
  sample.tick_id = json.at("tick_id").get<std::uint64_t>();
  sample.observations = json.at("observations").get<std::map<std::string, Json>>();
  sample.actions.clear();
  for (const auto& [actor, entry] : json.at("actions").items()) {
    sample.actions[actor] = TickAction{entry.at("action"), entry.at("defaulted").get<bool>()};
  }
  sample.rewards_received = json.at("rewards").get<std::vector<Reward>>();
  sample.messages.clear();
  for (const auto& entry : json.at("messages")) {
    sample.messages.push_back(LoggedMessage{entry.at("from").get<ParticipantId>(), entry.at("to").get<ParticipantId>(),
                                            entry.at("payload")});
  }
}

void to_json(Json& json, const LogHeader& header) {
  json = Json{{"params", header.params}, {"schemas", header.schemas}, {"start_time_ms", header.start_time_ms}};
}

void from_json(const Json& json, LogHeader& header) {
  header.params = parse_trial_params(json.at("params"));
  header.schemas = json.at("schemas");
  header.start_time_ms = json.at("start_time_ms").get<std::int64_t>();
}

void to_json(Json& json, const LogFooter& footer) {
  json = Json{{"end_reason", footer.end_reason},
              {"total_ticks", footer.total_ticks},
              {"aggregates", footer.aggregates},
              {"totals", footer.totals}};
}

void from_json(const Json& json, LogFooter& footer) {
  footer.end_reason = json.at("end_reason").get<std::string>();
  footer.total_ticks = json.at("total_ticks").get<std::uint64_t>();
  footer.aggregates = json.at("aggregates").get<std::vector<AggregatedReward>>();
  footer.totals = json.at("totals").get<std::map<std::string, double>>();
}

LogFooter make_footer(std::string end_reason, std::uint64_t total_ticks, const RewardLedger& ledger,
                      const std::vector<std::string>& actors) {
  LogFooter footer;
  footer.end_reason = std::move(end_reason);
  footer.total_ticks = total_ticks;
  for (auto& [key, aggregated] : ledger.table()) {
    footer.aggregates.push_back(aggregated);
  }
  for (const auto& actor : actors) {
    footer.totals[actor] = ledger.total(actor);
  }
  return footer;
}

std::filesystem::path log_path_for(const std::filesystem::path& dir, const std::string& trial_id) {
  return dir / (trial_id + std::string(LOG_EXTENSION));
}

DatalogWriter::DatalogWriter(std::filesystem::path path) : m_path(std::move(path)) {
  std::error_code ec;
  if (m_path.has_parent_path()) {
    std::filesystem::create_directories(m_path.parent_path(), ec);
  }
  m_out.open(m_path, std::ios::binary | std::ios::trunc);
  if (!m_out) {
    // The trial goes on without a log.
    m_degraded = true;
    spdlog::error("cannot open log {}; logging is degraded", m_path.string());
  }
}

void DatalogWriter::write(const Envelope& envelope, bool flush) {
  if (m_degraded) {
    return;
  }
  auto frame = encode_frame(envelope);
  m_out.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
  if (flush) {
    m_out.flush();
  }
  if (!m_out) {
    m_degraded = true;
    throw LogIoError("write failed on " + m_path.string());
  }
}

void DatalogWriter::append_header(const LogHeader& header) {
  if (m_stage != Stage::header) {
    throw LogOrderError("header must be the first part");
  }
  m_stage = Stage::samples;
  m_trial_id = header.params.trial_id;
  write(Envelope{MsgType::log_header, m_trial_id, 0, LOGGER_ID, header}, true);
}

void DatalogWriter::append_sample(const TickSample& sample) {
  if (m_stage != Stage::samples) {
    throw LogOrderError("samples must follow the header and precede the footer");
  }
  if (m_last_tick && sample.tick_id <= *m_last_tick) {
    throw LogOrderError(fmt::format("sample tick {} after tick {}", sample.tick_id, *m_last_tick));
  }
  for (const auto& [actor, action] : sample.actions) {
    if (!sample.observations.contains(actor)) {
      throw LogOrderError(fmt::format("action of '{}' without an observation at tick {}", actor, sample.tick_id));
    }
  }
  for (const auto& reward : sample.rewards_received) {
    if (reward.target_tick > sample.tick_id) {
      throw LogOrderError(fmt::format("reward targets future tick {} at tick {}", reward.target_tick, sample.tick_id));
    }
  }
  m_last_tick = sample.tick_id;
  ++m_samples;
  write(Envelope{MsgType::tick_sample, m_trial_id, sample.tick_id, LOGGER_ID, sample}, true);
}

void DatalogWriter::append_footer(const LogFooter& footer) {
  if (m_stage != Stage::samples) {
    throw LogOrderError("footer must follow the header");
  }
  m_stage = Stage::closed;
  write(Envelope{MsgType::log_footer, m_trial_id, footer.total_ticks, LOGGER_ID, footer}, true);
  if (!m_degraded) {
    m_out.close();
  }
}

double ReplayResult::total(const std::string& actor) const {
  double sum = 0.0;
  for (auto it = aggregates.lower_bound({actor, 0}); it != aggregates.end() && it->first.first == actor; ++it) {
    sum += it->second.value;
  }
  return sum;
}

ReplayResult replay_bytes(std::span<const std::uint8_t> bytes) {
  ReplayResult result;
  RewardLedger ledger;
  std::size_t offset = 0;
  std::size_t footer_offset = 0;
  std::map<std::uint64_t, std::size_t> index_of_tick;

  while (offset < bytes.size()) {
    std::optional<DecodedFrame> frame;
    try {
      frame = try_decode_frame(bytes.subspan(offset), FrameChannel::storage);
    }
    catch (const Error& e) {
      throw ReplayError(offset, e.what());
    }
    if (!frame) {
      break;  // trailing partial frame
    }
    const auto& envelope = frame->envelope;
    try {
      switch (envelope.msg_type) {
      case MsgType::log_header:
        if (result.header) {
          throw Error("duplicate header");
        }
        result.header = envelope.payload.get<LogHeader>();
        break;
      case MsgType::tick_sample: {
        if (!result.header || result.footer) {
          throw Error("sample outside header/footer");
        }
        auto sample = envelope.payload.get<TickSample>();
        if (!result.samples.empty() && sample.tick_id <= result.samples.back().sample.tick_id) {
          throw Error("sample ticks not ascending");
        }
        for (const auto& reward : sample.rewards_received) {
          if (reward.target_tick > sample.tick_id) {
            throw Error("reward targets a future tick");
          }
          ledger.add(reward);
        }
        index_of_tick[sample.tick_id] = result.samples.size();
        result.samples.push_back(ReplayedSample{std::move(sample), {}});
        break;
      }
      case MsgType::log_footer:
        if (!result.header || result.footer) {
          throw Error("footer out of order");
        }
        result.footer = envelope.payload.get<LogFooter>();
        footer_offset = offset;
        break;
      default:
        throw Error(fmt::format("unexpected frame {}", to_string(envelope.msg_type)));
      }
    }
    catch (const ReplayError&) {
      throw;
    }
    catch (const std::exception& e) {
      throw ReplayError(offset, e.what());
    }
    offset += frame->consumed;
  }

  result.truncated = !result.footer.has_value();
  result.aggregates = ledger.table();
  for (const auto& [key, aggregated] : result.aggregates) {
    auto it = index_of_tick.find(key.second);
    if (it != index_of_tick.end()) {
      result.samples[it->second].aggregated.emplace(key.first, aggregated);
    }
  }

  if (result.footer) {
    const auto& footer = *result.footer;
    std::vector<std::string> actors;
    for (const auto& [actor, unused] : footer.totals) {
      actors.push_back(actor);
    }
    auto expected = make_footer(footer.end_reason, result.samples.size(), ledger, actors);
    if (footer.total_ticks != result.samples.size()) {
      throw ReplayError(footer_offset, "footer tick count disagrees with samples");
    }
    if (expected.aggregates != footer.aggregates || expected.totals != footer.totals) {
      throw ReplayError(footer_offset, "footer aggregate table disagrees with raw samples");
    }
  }
  return result;
}

ReplayResult replay(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return replay_bytes(bytes);
}

std::vector<Transition> transitions(const ReplayResult& result) {
  std::vector<Transition> out;
  for (const auto& replayed : result.samples) {
    for (const auto& [actor, action] : replayed.sample.actions) {
      Transition t;
      t.actor = actor;
      t.tick_id = replayed.sample.tick_id;
      t.observation = replayed.sample.observations.at(actor);
      t.action = action.action;
      auto it = replayed.aggregated.find(actor);
      t.reward = it == replayed.aggregated.end() ? 0.0 : it->second.value;
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<Transition> sample_batch(const std::filesystem::path& path, std::size_t batch_size,
                                     std::uint64_t rng_seed) {
  if (batch_size < 1) {
    throw Error("batch_size must be at least 1");
  }
  auto all = transitions(replay(path));
  if (all.empty()) {
    throw EmptyLog();
  }
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  std::vector<Transition> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    batch.push_back(all[pick(rng)]);
  }
  return batch;
}

}  // namespace tw
