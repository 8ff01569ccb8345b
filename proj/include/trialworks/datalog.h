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

#ifndef TRIALWORKS_DATALOG_H
#define TRIALWORKS_DATALOG_H

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trialworks/protocol.h"
#include "trialworks/reward.h"

namespace tw {

struct TickAction {
  Json action;
  bool defaulted = false;

  bool operator==(const TickAction&) const = default;
};

struct LoggedMessage {
  ParticipantId from;
  ParticipantId to;
  Json payload;

  bool operator==(const LoggedMessage&) const = default;
};

struct TickSample {
  std::string trial_id;
  std::uint64_t tick_id = 0;
  std::map<std::string, Json> observations;
  std::map<std::string, TickAction> actions;
  // Raw rewards received during this tick, each keeping its own target tick.
  std::vector<Reward> rewards_received;
  std::vector<LoggedMessage> messages;

  bool operator==(const TickSample&) const = default;
};

struct LogHeader {
  TrialParams params;
  // class name -> {"observation": SchemaRef, "action": SchemaRef|null}
  Json schemas = Json::object();
  std::int64_t start_time_ms = 0;

  bool operator==(const LogHeader&) const = default;
};

struct LogFooter {
  std::string end_reason;
  std::uint64_t total_ticks = 0;
  std::vector<AggregatedReward> aggregates;
  std::map<std::string, double> totals;

  bool operator==(const LogFooter&) const = default;
};

void to_json(Json& json, const TickSample& sample);
void from_json(const Json& json, TickSample& sample);
void to_json(Json& json, const LogHeader& header);
void from_json(const Json& json, LogHeader& header);
void to_json(Json& json, const LogFooter& footer);
void from_json(const Json& json, LogFooter& footer);

// Builds a footer from a reward ledger: aggregates ordered by (actor, tick) and a total for each
// of `actors` (zero when it never received a reward).
LogFooter make_footer(std::string end_reason, std::uint64_t total_ticks, const RewardLedger& ledger,
                      const std::vector<std::string>& actors);

std::filesystem::path log_path_for(const std::filesystem::path& dir, const std::string& trial_id);

inline constexpr std::string_view LOG_EXTENSION = ".twlog";

// Append-only writer for one trial. Parts must arrive as header, ascending samples, footer.
class DatalogWriter {
public:
  explicit DatalogWriter(std::filesystem::path path);

  void append_header(const LogHeader& header);
  void append_sample(const TickSample& sample);
  void append_footer(const LogFooter& footer);

  const std::filesystem::path& path() const { return m_path; }
  // Set after an I/O failure; later parts are still order-checked but not written.
  bool degraded() const { return m_degraded; }
  std::uint64_t samples_written() const { return m_samples; }

private:
  enum class Stage { header, samples, closed };
  void write(const Envelope& envelope, bool flush);

  std::filesystem::path m_path;
  std::ofstream m_out;
  Stage m_stage = Stage::header;
  std::string m_trial_id;
  std::optional<std::uint64_t> m_last_tick;
  std::uint64_t m_samples = 0;
  bool m_degraded = false;
};

struct ReplayedSample {
  TickSample sample;
  // Aggregated rewards whose target is this tick, including ones received later.
  std::map<std::string, AggregatedReward> aggregated;
};

struct ReplayResult {
  std::optional<LogHeader> header;
  std::vector<ReplayedSample> samples;
  std::optional<LogFooter> footer;
  // Set when the log ends before a footer (including an empty file).
  bool truncated = false;
  std::map<RewardKey, AggregatedReward> aggregates;

  double total(const std::string& actor) const;
};

// Throws ReplayError (with byte offset) on a corrupt frame or a footer that disagrees with the
// raw samples.
ReplayResult replay(const std::filesystem::path& path);
ReplayResult replay_bytes(std::span<const std::uint8_t> bytes);

struct Transition {
  std::string actor;
  std::uint64_t tick_id = 0;
  Json observation;
  Json action;
  double reward = 0.0;

  bool operator==(const Transition&) const = default;
};

std::vector<Transition> transitions(const ReplayResult& result);

// Uniform sampling with replacement over all (actor, tick) transitions. Throws EmptyLog.
std::vector<Transition> sample_batch(const std::filesystem::path& path, std::size_t batch_size, std::uint64_t rng_seed);

}  // namespace tw

#endif
