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

#ifndef TRIALWORKS_CONTROLLER_H
#define TRIALWORKS_CONTROLLER_H

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trialworks/metrics.h"
#include "trialworks/protocol.h"
#include "trialworks/transport.h"

namespace tw::cli {

// Stable process exit codes.
enum ExitCode : int {
  EXIT_OK = 0,
  EXIT_USAGE = 1,
  EXIT_CONNECTION_REFUSED = 2,
  EXIT_INVALID_CONFIG = 3,
  EXIT_SETUP_FAILED = 4,
  EXIT_NOT_FOUND = 5,
  EXIT_CORRUPT_LOG = 6,
};

inline constexpr std::string_view DEFAULT_ORCHESTRATOR = "127.0.0.1:9000";
inline constexpr std::string_view DEFAULT_METRICS_ENDPOINT = "127.0.0.1:9002";

struct ControllerOptions {
  std::string orchestrator{DEFAULT_ORCHESTRATOR};
  // Lets tests reach an in-process orchestrator through "inproc://" addresses.
  std::shared_ptr<InProcNetwork> inproc;
  Millis connect_timeout{2000};
  // How long to wait for any single reply or event before giving up.
  Millis idle_timeout{600000};
};

// Reads a TrialParams object from canonical-text JSON. Throws InvalidParams naming the field
// ("config" when the file cannot be read or parsed).
TrialParams load_trial_config(const std::filesystem::path& path);

int cmd_start(const std::filesystem::path& config, const ControllerOptions& options, std::ostream& out, std::ostream& err);

struct CampaignOptions {
  std::size_t parallel = 1;
  std::size_t trials = 1;
  std::uint64_t base_seed = 0;
  double threshold = 0.5;
};

struct CampaignTrial {
  std::string trial_id;
  std::uint64_t seed = 0;
  std::string end_reason;
  std::map<std::string, double> implementation_totals;
  std::string log_path;
};

struct CampaignReport {
  // Indexed by trial position in the campaign.
  std::vector<CampaignTrial> trials;
  std::vector<MetricsRow> metrics;
  std::size_t started = 0;
  std::size_t ended = 0;
  std::size_t max_in_flight = 0;
};

// Keeps `parallel` trials in flight until `trials` have ended. Trial i runs with seed
// base_seed + i. Totals enter the campaign metrics in trial order.
int cmd_campaign(const std::filesystem::path& config, const CampaignOptions& campaign, const ControllerOptions& options,
                 std::ostream& out, std::ostream& err, CampaignReport* report = nullptr);
int run_campaign(const TrialParams& base, const CampaignOptions& campaign, const ControllerOptions& options,
                 std::ostream& out, std::ostream& err, CampaignReport* report = nullptr);

// Prints "trial_id state [reason]" per transition. With no trial id, watches every trial and
// stops once all known trials have ended, or after `count` ended events when given.
int cmd_watch(const std::optional<std::string>& trial_id, std::optional<std::size_t> count,
              const ControllerOptions& options, std::ostream& out, std::ostream& err);

int cmd_terminate(const std::string& trial_id, const ControllerOptions& options, std::ostream& out, std::ostream& err);

enum class ReplayMode { summary, rewards };
int cmd_replay(const std::filesystem::path& log, ReplayMode mode, const std::string& actor, std::ostream& out,
               std::ostream& err);

int cmd_metrics(const std::string& endpoint, std::ostream& out, std::ostream& err);

}  // namespace tw::cli

#endif
