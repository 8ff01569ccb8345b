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

#ifndef TRIALWORKS_PROTOCOL_H
#define TRIALWORKS_PROTOCOL_H

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace tw {

using Json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

// The wire set is closed; the storage set only ever appears in log and checkpoint files.
enum class MsgType {
  register_service,
  register_ack,
  start_trial,
  trial_state,
  join_trial,
  join_ack,
  observation_set,
  action,
  reward,
  message,
  end_trial,
  trial_ended,
  heartbeat,
  error,
  log_header,
  tick_sample,
  log_footer,
  model_checkpoint,
};

enum class FrameChannel { wire, storage };

std::string_view to_string(MsgType type);
std::optional<MsgType> msg_type_from_string(std::string_view name);
bool is_wire_type(MsgType type);

enum class ParticipantKind { environment, actor, controller, observer, orchestrator };

std::string_view to_string(ParticipantKind kind);
std::optional<ParticipantKind> participant_kind_from_string(std::string_view name);

struct ParticipantId {
  ParticipantKind kind = ParticipantKind::actor;
  std::string name;

  bool operator==(const ParticipantId&) const = default;
  auto operator<=>(const ParticipantId&) const = default;
};

struct Envelope {
  MsgType msg_type = MsgType::heartbeat;
  std::string trial_id;
  std::uint64_t tick_id = 0;
  ParticipantId sender;
  Json payload = Json::object();

  bool operator==(const Envelope&) const = default;
};

struct SchemaRef {
  std::string schema_name;
  int version = 1;

  bool operator==(const SchemaRef&) const = default;
};

// A class with no action schema never acts (observers, evaluators).
struct ActorClass {
  std::string class_name;
  SchemaRef observation_schema;
  std::optional<SchemaRef> action_schema;
  Json default_action;

  bool acts() const { return action_schema.has_value(); }
};

struct Reward {
  double value = 0.0;
  double confidence = 1.0;
  ParticipantId source;
  std::string target_actor;
  std::uint64_t target_tick = 0;

  bool operator==(const Reward&) const = default;

  // Throws ProtocolError when value is non-finite or confidence is outside (0, 1].
  void validate() const;
};

struct ActorSlot {
  std::string actor_name;
  std::string class_name;
  std::string implementation;
  std::optional<std::string> endpoint;
  bool is_client = false;

  bool operator==(const ActorSlot&) const = default;
};

struct TrialParams {
  std::string trial_id;
  std::string env_implementation;
  std::optional<std::string> env_endpoint;
  Json env_config = Json::object();
  std::vector<ActorSlot> actor_slots;
  std::uint64_t max_tick = 600;
  std::uint64_t retro_window = 32;
  std::uint64_t action_timeout_ms = 1000;
  std::uint64_t seed = 0;

  bool operator==(const TrialParams&) const = default;

  // Static checks only; throws InvalidParams naming the first offending field.
  void validate() const;
  const ActorSlot* find_slot(std::string_view actor_name) const;
};

enum class TrialStateKind { pending, initializing, waiting_for_clients, running, terminating, ended };

std::string_view to_string(TrialStateKind state);
std::optional<TrialStateKind> trial_state_from_string(std::string_view name);
bool is_valid_transition(TrialStateKind from, TrialStateKind to);

struct TrialState {
  TrialStateKind state = TrialStateKind::pending;
  std::optional<std::string> reason;

  bool operator==(const TrialState&) const = default;
};

void to_json(Json& json, const ParticipantId& id);
void from_json(const Json& json, ParticipantId& id);
void to_json(Json& json, const SchemaRef& ref);
void from_json(const Json& json, SchemaRef& ref);
void to_json(Json& json, const Reward& reward);
void from_json(const Json& json, Reward& reward);
void to_json(Json& json, const ActorSlot& slot);
void from_json(const Json& json, ActorSlot& slot);
void to_json(Json& json, const TrialParams& params);
void from_json(const Json& json, TrialParams& params);

// Parses a TrialParams object, reporting the dotted path of the first bad field as InvalidParams.
TrialParams parse_trial_params(const Json& json);

// Canonical text: sorted keys, no insignificant whitespace, UTF-8.
std::string to_canonical_text(const Envelope& envelope);
Envelope envelope_from_text(std::string_view text, FrameChannel channel = FrameChannel::wire);

constexpr std::size_t FRAME_HEADER_SIZE = 4;
constexpr std::uint32_t MAX_FRAME_SIZE = 64U * 1024U * 1024U;

Bytes encode_frame(const Envelope& envelope);
void append_frame(Bytes& out, const Envelope& envelope);

struct DecodedFrame {
  Envelope envelope;
  std::size_t consumed = 0;
};

// Throws NeedMoreBytes when the buffer does not hold a complete frame.
DecodedFrame decode_frame(std::span<const std::uint8_t> bytes, FrameChannel channel = FrameChannel::wire);
std::optional<DecodedFrame> try_decode_frame(std::span<const std::uint8_t> bytes,
                                             FrameChannel channel = FrameChannel::wire);

// Throws EncodeError on the first non-finite number found in `value`.
void check_finite(const Json& value, std::string_view path = "");

}  // namespace tw

#endif
