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

#ifndef TRIALWORKS_SCHEMA_H
#define TRIALWORKS_SCHEMA_H

#include <string_view>
#include <vector>

#include "trialworks/protocol.h"

namespace tw {

inline const SchemaRef ARENA_OBS_SCHEMA{"arena_obs", 1};
inline const SchemaRef ARENA_ACTION_SCHEMA{"arena_action", 1};
inline const SchemaRef ARENA_WORLD_SCHEMA{"arena_world", 1};

inline constexpr std::string_view PLAYER_CLASS = "player";
inline constexpr std::string_view OBSERVER_CLASS = "observer";

// Succeeds iff `value` has exactly the fields, types and ranges the schema declares.
// Throws SchemaViolation naming the first offending path.
void validate_against_schema(const Json& value, const SchemaRef& schema);

bool is_known_schema(const SchemaRef& schema);

// Compiled-in actor class table.
const ActorClass* find_actor_class(std::string_view class_name);
const std::vector<ActorClass>& actor_classes();

}  // namespace tw

#endif
