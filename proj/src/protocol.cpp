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

#include "trialworks/protocol.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <utility>

#include "trialworks/error.h"

namespace tw {
namespace {

constexpr std::array<std::pair<MsgType, std::string_view>, 18> MSG_TYPE_NAMES{{
    {MsgType::register_service, "register_service"},
    {MsgType::register_ack, "register_ack"},
    {MsgType::start_trial, "start_trial"},
    {MsgType::trial_state, "trial_state"},
    {MsgType::join_trial, "join_trial"},
    {MsgType::join_ack, "join_ack"},
    {MsgType::observation_set, "observation_set"},
    {MsgType::action, "action"},
    {MsgType::reward, "reward"},
    {MsgType::message, "message"},
    {MsgType::end_trial, "end_trial"},
    {MsgType::trial_ended, "trial_ended"},
    {MsgType::heartbeat, "heartbeat"},
    {MsgType::error, "error"},
    {MsgType::log_header, "log_header"},
    {MsgType::tick_sample, "tick_sample"},
    {MsgType::log_footer, "log_footer"},
    {MsgType::model_checkpoint, "model_checkpoint"},
}};

constexpr std::array<std::pair<ParticipantKind, std::string_view>, 5> KIND_NAMES{{
    {ParticipantKind::environment, "environment"},
    {ParticipantKind::actor, "actor"},
    {ParticipantKind::controller, "controller"},
    {ParticipantKind::observer, "observer"},
    {ParticipantKind::orchestrator, "orchestrator"},
}};

constexpr std::array<std::pair<TrialStateKind, std::string_view>, 6> STATE_NAMES{{
    {TrialStateKind::pending, "pending"},
    {TrialStateKind::initializing, "initializing"},
    {TrialStateKind::waiting_for_clients, "waiting_for_clients"},
    {TrialStateKind::running, "running"},
    {TrialStateKind::terminating, "terminating"},
    {TrialStateKind::ended, "ended"},
}};

template <class Table, class Key>
std::string_view lookup_name(const Table& table, Key key) {
  for (const auto& [k, name] : table) {
    if (k == key) {
      return name;
    }
  }
  return "unknown";
}

template <class Key, class Table>
std::optional<Key> lookup_key(const Table& table, std::string_view name) {
  for (const auto& [k, n] : table) {
    if (n == name) {
      return k;
    }
  }
  return std::nullopt;
}

const Json& require(const Json& json, const char* key) {
  auto it = json.find(key);
  if (it == json.end()) {
    throw ProtocolError(std::string("missing field ") + key);
  }
  return *it;
}

std::uint64_t require_uint(const Json& json, const char* key) {
  const auto& value = require(json, key);
  if (!value.is_number_integer() || (value.is_number_integer() && !value.is_number_unsigned() && value.get<std::int64_t>() < 0)) {
    throw ProtocolError(std::string("field ") + key + " must be a non-negative integer");
  }
  return value.get<std::uint64_t>();
}

std::string require_string(const Json& json, const char* key) {
  const auto& value = require(json, key);
  if (!value.is_string()) {
    throw ProtocolError(std::string("field ") + key + " must be a string");
  }
  return value.get<std::string>();
}

}  // namespace

std::string_view to_string(MsgType type) { return lookup_name(MSG_TYPE_NAMES, type); }

std::optional<MsgType> msg_type_from_string(std::string_view name) {
  return lookup_key<MsgType>(MSG_TYPE_NAMES, name);
}

bool is_wire_type(MsgType type) {
  switch (type) {
  case MsgType::log_header:
  case MsgType::tick_sample:
  case MsgType::log_footer:
  case MsgType::model_checkpoint:
    return false;
  default:
    return true;
  }
}

std::string_view to_string(ParticipantKind kind) { return lookup_name(KIND_NAMES, kind); }

std::optional<ParticipantKind> participant_kind_from_string(std::string_view name) {
  return lookup_key<ParticipantKind>(KIND_NAMES, name);
}

std::string_view to_string(TrialStateKind state) { return lookup_name(STATE_NAMES, state); }

std::optional<TrialStateKind> trial_state_from_string(std::string_view name) {
  return lookup_key<TrialStateKind>(STATE_NAMES, name);
}

bool is_valid_transition(TrialStateKind from, TrialStateKind to) {
  using S = TrialStateKind;
  switch (from) {
  case S::pending:
    return to == S::initializing || to == S::ended;
  case S::initializing:
    // Setup failures end the trial straight from initializing.
    return to == S::waiting_for_clients || to == S::running || to == S::ended;
  case S::waiting_for_clients:
    return to == S::running || to == S::terminating;
  case S::running:
    return to == S::terminating;
  case S::terminating:
    return to == S::ended;
  case S::ended:
    return false;
  }
  return false;
}

void Reward::validate() const {
  if (!std::isfinite(value)) {
    throw ProtocolError("reward value must be finite");
  }
  if (!(confidence > 0.0 && confidence <= 1.0)) {
    throw ProtocolError("reward confidence must lie in (0, 1]");
  }
  if (target_actor.empty()) {
    throw ProtocolError("reward target_actor is empty");
  }
}

const ActorSlot* TrialParams::find_slot(std::string_view actor_name) const {
  for (const auto& slot : actor_slots) {
    if (slot.actor_name == actor_name) {
      return &slot;
    }
  }
  return nullptr;
}

void TrialParams::validate() const {
  // Trial ids name log files.
  const bool id_ok = std::all_of(trial_id.begin(), trial_id.end(), [](unsigned char c) {
    return std::isalnum(c) != 0 || c == '-' || c == '_' || c == '.';
  });
  if (!id_ok || trial_id.starts_with('.') || trial_id.size() > 128) {
    throw InvalidParams("trial_id");
  }
  if (env_implementation.empty()) {
    throw InvalidParams("env_implementation");
  }
  if (actor_slots.empty()) {
    throw InvalidParams("actor_slots");
  }
  if (max_tick < 1) {
    throw InvalidParams("max_tick");
  }
  if (action_timeout_ms < 1) {
    throw InvalidParams("action_timeout_ms");
  }
  if (!env_config.is_object()) {
    throw InvalidParams("env_config");
  }
  for (std::size_t i = 0; i < actor_slots.size(); ++i) {
    const auto& slot = actor_slots[i];
    auto path = fmt::format("actor_slots[{}]", i);
    if (slot.actor_name.empty()) {
      throw InvalidParams(path + ".actor_name");
    }
    if (slot.class_name.empty()) {
      throw InvalidParams(path + ".class_name");
    }
    if (!slot.is_client && slot.implementation.empty()) {
      throw InvalidParams(path + ".implementation");
    }
    if (slot.is_client && slot.endpoint.has_value()) {
      throw InvalidParams(path + ".endpoint");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (actor_slots[j].actor_name == slot.actor_name) {
        throw InvalidParams(path + ".actor_name");
      }
    }
  }
}

void to_json(Json& json, const ParticipantId& id) {
  json = Json{{"kind", to_string(id.kind)}, {"name", id.name}};
}

void from_json(const Json& json, ParticipantId& id) {
  if (!json.is_object()) {
    throw ProtocolError("participant must be an object");
  }
  auto kind_name = require_string(json, "kind");
  auto kind = participant_kind_from_string(kind_name);
  if (!kind) {
    throw ProtocolError("unknown participant kind " + kind_name);
  }
  id.kind = *kind;
  id.name = require_string(json, "name");
  if (id.name.empty()) {
    throw ProtocolError("participant name is empty");
  }
}

void to_json(Json& json, const SchemaRef& ref) {
  json = Json{{"schema_name", ref.schema_name}, {"version", ref.version}};
}

void from_json(const Json& json, SchemaRef& ref) {
  ref.schema_name = require_string(json, "schema_name");
  ref.version = static_cast<int>(require_uint(json, "version"));
}

void to_json(Json& json, const Reward& reward) {
  json = Json{{"value", reward.value},
              {"confidence", reward.confidence},
              {"source", reward.source},
              {"target_actor", reward.target_actor},
              {"target_tick", reward.target_tick}};
}

void from_json(const Json& json, Reward& reward) {
  if (!json.is_object()) {
    throw ProtocolError("reward must be an object");
  }
  const auto& value = require(json, "value");
  const auto& confidence = require(json, "confidence");
  if (!value.is_number() || !confidence.is_number()) {
    throw ProtocolError("reward value and confidence must be numbers");
  }
  reward.value = value.get<double>();
  reward.confidence = confidence.get<double>();
  reward.source = require(json, "source").get<ParticipantId>();
  reward.target_actor = require_string(json, "target_actor");
  reward.target_tick = require_uint(json, "target_tick");
  reward.validate();
}

void to_json(Json& json, const ActorSlot& slot) {
  json = Json{{"actor_name", slot.actor_name},
              {"class_name", slot.class_name},
              {"implementation", slot.implementation},
              {"is_client", slot.is_client}};
  if (slot.endpoint) {
    json["endpoint"] = *slot.endpoint;
  }
}

void from_json(const Json& json, ActorSlot& slot) {
  slot.actor_name = require_string(json, "actor_name");
  slot.class_name = require_string(json, "class_name");
  slot.implementation = json.value("implementation", std::string());
  slot.is_client = json.value("is_client", false);
  if (auto it = json.find("endpoint"); it != json.end() && !it->is_null()) {
    slot.endpoint = it->get<std::string>();
  }
  else {
    slot.endpoint.reset();
  }
}

void to_json(Json& json, const TrialParams& params) {
  json = Json{{"trial_id", params.trial_id},
              {"env_implementation", params.env_implementation},
              {"env_config", params.env_config},
              {"actor_slots", params.actor_slots},
              {"max_tick", params.max_tick},
              {"retro_window", params.retro_window},
              {"action_timeout_ms", params.action_timeout_ms},
              {"seed", params.seed}};
  if (params.env_endpoint) {
    json["env_endpoint"] = *params.env_endpoint;
  }
}

void from_json(const Json& json, TrialParams& params) { params = parse_trial_params(json); }

TrialParams parse_trial_params(const Json& json) {
  if (!json.is_object()) {
    throw InvalidParams("<root>");
  }
  TrialParams params;
  auto get_string = [&](const char* key, std::string& out, bool required) {
    auto it = json.find(key);
    if (it == json.end()) {
      if (required) {
        throw InvalidParams(key);
      }
      return;
    }
    if (!it->is_string()) {
      throw InvalidParams(key);
    }
    out = it->get<std::string>();
  };
  auto get_uint = [&](const char* key, std::uint64_t& out) {
    auto it = json.find(key);
    if (it == json.end()) {
      return;
    }
    if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0)) {
      throw InvalidParams(key);
    }
    out = it->get<std::uint64_t>();
  };

  get_string("trial_id", params.trial_id, false);
  get_string("env_implementation", params.env_implementation, true);
  if (auto it = json.find("env_endpoint"); it != json.end() && !it->is_null()) {
    if (!it->is_string()) {
      throw InvalidParams("env_endpoint");
    }
    params.env_endpoint = it->get<std::string>();
  }
  if (auto it = json.find("env_config"); it != json.end()) {
    params.env_config = *it;
  }
  get_uint("max_tick", params.max_tick);
  get_uint("retro_window", params.retro_window);
  get_uint("action_timeout_ms", params.action_timeout_ms);
  get_uint("seed", params.seed);

  auto slots = json.find("actor_slots");
  if (slots == json.end() || !slots->is_array()) {
    throw InvalidParams("actor_slots");
  }
  for (std::size_t i = 0; i < slots->size(); ++i) {
    const auto& entry = (*slots)[i];
    auto path = fmt::format("actor_slots[{}]", i);
    if (!entry.is_object()) {
      throw InvalidParams(path);
    }
    ActorSlot slot;
    for (const char* key : {"actor_name", "class_name"}) {
      auto it = entry.find(key);
      if (it == entry.end() || !it->is_string()) {
        throw InvalidParams(path + "." + key);
      }
    }
    auto impl = entry.find("implementation");
    if (impl != entry.end() && !impl->is_string()) {
      throw InvalidParams(path + ".implementation");
    }
    auto client = entry.find("is_client");
    if (client != entry.end() && !client->is_boolean()) {
      throw InvalidParams(path + ".is_client");
    }
    auto endpoint = entry.find("endpoint");
    if (endpoint != entry.end() && !endpoint->is_null() && !endpoint->is_string()) {
      throw InvalidParams(path + ".endpoint");
    }
    from_json(entry, slot);
    params.actor_slots.push_back(std::move(slot));
  }
  params.validate();
  return params;
}

namespace {

bool all_finite(const Json& value) {
  switch (value.type()) {
  case Json::value_t::number_float:
    return std::isfinite(value.get_ref<const Json::number_float_t&>());
  case Json::value_t::object:
  case Json::value_t::array:
    return std::all_of(value.begin(), value.end(), [](const Json& child) { return all_finite(child); });
  default:
    return true;
  }
}

void throw_at_first_non_finite(const Json& value, const std::string& path) {
  switch (value.type()) {
  case Json::value_t::number_float:
    if (!std::isfinite(value.get<double>())) {
      throw EncodeError(fmt::format("non-finite number at '{}'", path));
    }
    break;
  case Json::value_t::object:
    for (const auto& [key, child] : value.items()) {
      throw_at_first_non_finite(child, path.empty() ? key : fmt::format("{}.{}", path, key));
    }
    break;
  case Json::value_t::array:
    for (std::size_t i = 0; i < value.size(); ++i) {
      throw_at_first_non_finite(value[i], fmt::format("{}[{}]", path, i));
    }
    break;
  default:
    break;
  }
}

std::string dump_strict(const Json& value) {
  try {
    return value.dump(-1, ' ', false, Json::error_handler_t::strict);
  }
  catch (const Json::type_error& e) {
    throw EncodeError(e.what());
  }
}

}  // namespace

void check_finite(const Json& value, std::string_view path) {
  // Paths are only built once a bad number is known to exist.
  if (!all_finite(value)) {
    throw_at_first_non_finite(value, std::string(path));
  }
}

std::string to_canonical_text(const Envelope& envelope) {
  if (envelope.sender.name.empty()) {
    throw EncodeError("sender name is empty");
  }
  check_finite(envelope.payload, "payload");
  // Keys in sorted order, written directly so the payload is not copied.
  std::string text = "{\"msg_type\":";
  text += dump_strict(Json(to_string(envelope.msg_type)));
  text += ",\"payload\":";
  text += dump_strict(envelope.payload);
  text += ",\"sender\":";
  text += dump_strict(Json(envelope.sender));
  text += ",\"tick_id\":";
  text += std::to_string(envelope.tick_id);
  text += ",\"trial_id\":";
  text += dump_strict(Json(envelope.trial_id));
  text += '}';
  return text;
}

Envelope envelope_from_text(std::string_view text, FrameChannel channel) {
  Json json = Json::parse(text, nullptr, false);
  if (json.is_discarded() || !json.is_object()) {
    throw ProtocolError("malformed envelope text");
  }
  auto type_name = require_string(json, "msg_type");
  auto type = msg_type_from_string(type_name);
  bool allowed = type.has_value() && (is_wire_type(*type) == (channel == FrameChannel::wire));
  if (!allowed) {
    throw ProtocolError(type_name);
  }
  Envelope envelope;
  envelope.msg_type = *type;
  envelope.trial_id = require_string(json, "trial_id");
  envelope.tick_id = require_uint(json, "tick_id");
  envelope.sender = require(json, "sender").get<ParticipantId>();
  require(json, "payload");
  envelope.payload = std::move(json.at("payload"));
  return envelope;
}

void append_frame(Bytes& out, const Envelope& envelope) {
  auto text = to_canonical_text(envelope);
  if (text.size() > MAX_FRAME_SIZE) {
    throw EncodeError("frame exceeds maximum size");
  }
  const auto size = static_cast<std::uint32_t>(text.size());
  out.push_back(static_cast<std::uint8_t>(size >> 24));
  out.push_back(static_cast<std::uint8_t>(size >> 16));
  out.push_back(static_cast<std::uint8_t>(size >> 8));
  out.push_back(static_cast<std::uint8_t>(size));
  out.insert(out.end(), text.begin(), text.end());
}

Bytes encode_frame(const Envelope& envelope) {
  Bytes out;
  append_frame(out, envelope);
  return out;
}

std::optional<DecodedFrame> try_decode_frame(std::span<const std::uint8_t> bytes, FrameChannel channel) {
  if (bytes.size() < FRAME_HEADER_SIZE) {
    return std::nullopt;
  }
  const std::uint32_t size = (std::uint32_t{bytes[0]} << 24) | (std::uint32_t{bytes[1]} << 16) |
                             (std::uint32_t{bytes[2]} << 8) | std::uint32_t{bytes[3]};
  if (size > MAX_FRAME_SIZE) {
    throw ProtocolError("frame length exceeds maximum");
  }
  if (bytes.size() - FRAME_HEADER_SIZE < size) {
    return std::nullopt;
  }
  std::string_view text(reinterpret_cast<const char*>(bytes.data() + FRAME_HEADER_SIZE), size);
  return DecodedFrame{envelope_from_text(text, channel), FRAME_HEADER_SIZE + size};
}

DecodedFrame decode_frame(std::span<const std::uint8_t> bytes, FrameChannel channel) {
  auto frame = try_decode_frame(bytes, channel);
  if (!frame) {
    throw NeedMoreBytes();
  }
  return std::move(*frame);
}

}  // namespace tw
