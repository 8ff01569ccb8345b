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

#include "trialworks/schema.h"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "trialworks/error.h"

namespace tw {
namespace {

enum class FieldType { boolean, number, integer, string, object, array };

struct FieldSpec {
  std::string name;
  FieldType type = FieldType::number;
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();
  // Object members, or the single element spec of an array.
  std::vector<FieldSpec> children;
};

struct SchemaEntry {
  SchemaRef ref;
  std::vector<FieldSpec> fields;
};

FieldSpec boolean(std::string name) { return {std::move(name), FieldType::boolean}; }
FieldSpec number(std::string name, double min = -std::numeric_limits<double>::infinity(),
                 double max = std::numeric_limits<double>::infinity()) {
  return {std::move(name), FieldType::number, min, max};
}
FieldSpec integer(std::string name, double min = 0.0) { return {std::move(name), FieldType::integer, min}; }
FieldSpec string(std::string name) { return {std::move(name), FieldType::string}; }
FieldSpec object(std::string name, std::vector<FieldSpec> members) {
  return {std::move(name), FieldType::object, 0, 0, std::move(members)};
}
FieldSpec array_of(std::string name, std::vector<FieldSpec> element_members) {
  return {std::move(name), FieldType::array, 0, 0, {object("", std::move(element_members))}};
}

constexpr double PI = std::numbers::pi;

const std::vector<SchemaEntry>& schema_table() {
  static const std::vector<SchemaEntry> table{
      {ARENA_ACTION_SCHEMA,
       {boolean("fire"), number("strafe", -1.0, 1.0), number("forward", -1.0, 1.0), number("rotate", -1.0, 1.0)}},
      {ARENA_OBS_SCHEMA,
       {integer("tick_id"),
        object("self", {number("x"), number("y"), number("theta", -PI, PI), boolean("alive")}),
        array_of("visible_players",
                 {number("x"), number("y"), number("theta", -PI, PI), boolean("opponent"), boolean("alive")}),
        array_of("visible_projectiles", {number("x"), number("y"), number("vx"), number("vy")})}},
      {ARENA_WORLD_SCHEMA,
       {integer("tick_id"),
        number("arena_size", 0.0),
        array_of("players",
                 {string("name"), integer("team"), number("x"), number("y"), number("theta", -PI, PI),
                  boolean("alive")}),
        array_of("projectiles", {string("owner"), number("x"), number("y"), number("vx"), number("vy")})}},
  };
  return table;
}

std::string join(const std::string& base, const std::string& name) { return base.empty() ? name : base + "." + name; }

void validate_fields(const Json& value, const std::vector<FieldSpec>& fields, const std::string& path);

void validate_field(const Json& value, const FieldSpec& spec, const std::string& path) {
  switch (spec.type) {
  case FieldType::boolean:
    if (!value.is_boolean()) {
      throw SchemaViolation(path);
    }
    return;
  case FieldType::number: {
    if (!value.is_number()) {
      throw SchemaViolation(path);
    }
    const double v = value.get<double>();
    if (!std::isfinite(v) || v < spec.min || v > spec.max) {
      throw SchemaViolation(path);
    }
    return;
  }
  case FieldType::integer:
    if (!value.is_number_integer() || value.get<double>() < spec.min) {
      throw SchemaViolation(path);
    }
    return;
  case FieldType::string:
    if (!value.is_string()) {
      throw SchemaViolation(path);
    }
    return;
  case FieldType::object:
    validate_fields(value, spec.children, path);
    return;
  case FieldType::array:
    if (!value.is_array()) {
      throw SchemaViolation(path);
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      validate_field(value[i], spec.children.front(), path + "[" + std::to_string(i) + "]");
    }
    return;
  }
}

void validate_fields(const Json& value, const std::vector<FieldSpec>& fields, const std::string& path) {
  if (!value.is_object()) {
    throw SchemaViolation(fields.empty() ? path : join(path, fields.front().name));
  }
  for (const auto& field : fields) {
    auto it = value.find(field.name);
    if (it == value.end()) {
      throw SchemaViolation(join(path, field.name));
    }
    validate_field(*it, field, join(path, field.name));
  }
  if (value.size() != fields.size()) {
    for (const auto& [key, unused] : value.items()) {
      bool declared = false;
      for (const auto& field : fields) {
        declared = declared || field.name == key;
      }
      if (!declared) {
        throw SchemaViolation(join(path, key));
      }
    }
  }
}

const SchemaEntry* find_schema(const SchemaRef& ref) {
  for (const auto& entry : schema_table()) {
    if (entry.ref == ref) {
      return &entry;
    }
  }
  return nullptr;
}

}  // namespace

bool is_known_schema(const SchemaRef& schema) { return find_schema(schema) != nullptr; }

void validate_against_schema(const Json& value, const SchemaRef& schema) {
  const auto* entry = find_schema(schema);
  if (entry == nullptr) {
    throw ProtocolError(fmt::format("unknown schema {} v{}", schema.schema_name, schema.version));
  }
  validate_fields(value, entry->fields, "");
}

const std::vector<ActorClass>& actor_classes() {
  static const std::vector<ActorClass> classes{
      {std::string(PLAYER_CLASS), ARENA_OBS_SCHEMA, ARENA_ACTION_SCHEMA,
       Json{{"fire", false}, {"strafe", 0.0}, {"forward", 0.0}, {"rotate", 0.0}}},
      {std::string(OBSERVER_CLASS), ARENA_WORLD_SCHEMA, std::nullopt, Json()},
  };
  return classes;
}

const ActorClass* find_actor_class(std::string_view class_name) {
  for (const auto& cls : actor_classes()) {
    if (cls.class_name == class_name) {
      return &cls;
    }
  }
  return nullptr;
}

}  // namespace tw
