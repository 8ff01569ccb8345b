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

#ifndef TRIALWORKS_ERROR_H
#define TRIALWORKS_ERROR_H

#include <cstdint>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace tw {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Wire codec
class EncodeError : public Error {
public:
  using Error::Error;
};

class NeedMoreBytes : public Error {
public:
  NeedMoreBytes() : Error("need more bytes") {}
};

// Malformed frame or a msg_type outside the closed set. `detail()` carries the offending
// type name when the failure is a closed-set violation.
class ProtocolError : public Error {
public:
  explicit ProtocolError(std::string detail) : Error("protocol error: " + detail), m_detail(std::move(detail)) {}
  const std::string& detail() const { return m_detail; }

private:
  std::string m_detail;
};

class SchemaViolation : public Error {
public:
  explicit SchemaViolation(std::string path) : Error("schema violation at '" + path + "'"), m_path(std::move(path)) {}
  const std::string& path() const { return m_path; }

private:
  std::string m_path;
};

// Registry
class ConflictError : public Error {
public:
  using Error::Error;
};

class ResolutionError : public Error {
public:
  explicit ResolutionError(std::string slot) :
      Error("no live endpoint for slot '" + slot + "'"), m_slot(std::move(slot)) {}
  const std::string& slot() const { return m_slot; }

private:
  std::string m_slot;
};

// Orchestrator
class NotFound : public Error {
public:
  using Error::Error;
};

class InvalidParams : public Error {
public:
  explicit InvalidParams(std::string field) : Error("invalid trial params: " + field), m_field(std::move(field)) {}
  const std::string& field() const { return m_field; }

private:
  std::string m_field;
};

// Datalog
class LogOrderError : public Error {
public:
  using Error::Error;
};

class LogIoError : public Error {
public:
  using Error::Error;
};

class ReplayError : public Error {
public:
  ReplayError(std::uint64_t offset, const std::string& what) :
      Error(fmt::format("replay error at byte offset {}: {}", offset, what)), m_offset(offset) {}
  std::uint64_t offset() const { return m_offset; }

private:
  std::uint64_t m_offset;
};

class EmptyLog : public Error {
public:
  EmptyLog() : Error("log holds no transitions") {}
};

class MetricsError : public Error {
public:
  using Error::Error;
};

class InitError : public Error {
public:
  using Error::Error;
};

class ModelError : public Error {
public:
  using Error::Error;
};

class TransportError : public Error {
public:
  using Error::Error;
};

}  // namespace tw

#endif
