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

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "support/cluster.h"
#include "trialworks/controller.h"
#include "trialworks/datalog.h"
#include "trialworks/metrics.h"

namespace tw::cli {
namespace {

using testing::Cluster;
using testing::TempDir;
using testing::duel;

ControllerOptions inproc_options(Cluster& cluster) {
  ControllerOptions options;
  options.orchestrator = "inproc://orchestrator";
  options.inproc = cluster.inproc();
  options.idle_timeout = Millis(120000);
  return options;
}

std::filesystem::path write_config(const TempDir& dir, const std::string& name, const Json& config) {
  auto path = dir.path() / name;
  std::ofstream(path) << config.dump(2);
  return path;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> result;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    result.push_back(line);
  }
  return result;
}

TEST(Start, PrintsTheTrialId) {
  Cluster cluster;
  TempDir dir;
  auto config = write_config(dir, "duel.json", Json(duel("cli-start", "random_v1", "random_v1", 1, 10)));
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_EQ(cmd_start(config, inproc_options(cluster), out, err), EXIT_OK);
  EXPECT_EQ(out.str(), "cli-start\n");
  ASSERT_TRUE(cluster.orchestrator().wait_until_ended("cli-start", Millis(30000)));
}

TEST(Start, InvalidConfigNamesTheField) {
  Cluster cluster;
  TempDir dir;
  auto params = duel("cli-bad", "random_v1", "random_v1", 1);
  params.actor_slots.clear();
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_EQ(cmd_start(write_config(dir, "bad.json", Json(params)), inproc_options(cluster), out, err), EXIT_INVALID_CONFIG);
  EXPECT_EQ(err.str(), "invalid config: actor_slots\n");
  std::ostringstream err2;
  EXPECT_EQ(cmd_start(dir.path() / "missing.json", inproc_options(cluster), out, err2), EXIT_INVALID_CONFIG);
  EXPECT_EQ(err2.str(), "invalid config: config\n");
  std::ofstream(dir.path() / "garbage.json") << "{not json";
  EXPECT_EQ(cmd_start(dir.path() / "garbage.json", inproc_options(cluster), out, err), EXIT_INVALID_CONFIG);
  EXPECT_TRUE(out.str().empty());
}

TEST(Connection, RefusedIsExitTwo) {
  TempDir dir;
  auto config = write_config(dir, "duel.json", Json(duel("cli-refused", "random_v1", "random_v1", 1)));
  ControllerOptions options;
  options.orchestrator = "127.0.0.1:1";
  options.connect_timeout = Millis(500);
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_EQ(cmd_start(config, options, out, err), EXIT_CONNECTION_REFUSED);
  EXPECT_EQ(cmd_watch(std::nullopt, std::nullopt, options, out, err), EXIT_CONNECTION_REFUSED);
  EXPECT_EQ(cmd_terminate("x", options, out, err), EXIT_CONNECTION_REFUSED);
  EXPECT_EQ(cmd_metrics("127.0.0.1:1", out, err), EXIT_CONNECTION_REFUSED);
}

TEST(Campaign, RunsAllTrialsWithinTheParallelBound) {
  Cluster cluster;
  CampaignOptions campaign;
  campaign.parallel = 3;
  campaign.trials = 10;
  campaign.base_seed = 40;
  CampaignReport report;
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(run_campaign(duel("camp", "heuristic_v1", "random_v1", 0, 40), campaign, inproc_options(cluster), out, err, &report),
            EXIT_OK);
  EXPECT_EQ(report.started, 10U);
  EXPECT_EQ(report.ended, 10U);
  EXPECT_LE(report.max_in_flight, 3U);
  EXPECT_GE(report.max_in_flight, 2U);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < report.trials.size(); ++i) {
    const auto& trial = report.trials[i];
    EXPECT_EQ(trial.seed, 40U + i);
    EXPECT_EQ(trial.trial_id, fmt::format("camp-{:05d}", i));
    EXPECT_EQ(trial.implementation_totals.size(), 2U);
    auto replayed = replay(trial.log_path);
    EXPECT_EQ(replayed.header->params.seed, trial.seed);
    ids.insert(trial.trial_id);
  }
  EXPECT_EQ(ids.size(), 10U);
  ASSERT_EQ(report.metrics.size(), 2U);
  for (const auto& row : report.metrics) {
    EXPECT_EQ(row.trial_count, 10U);
  }
  auto printed = lines(out.str());
  ASSERT_EQ(printed.size(), 3U);
  EXPECT_EQ(printed[0], "campaign trials 10 ended 10 parallel 3");
  EXPECT_EQ(printed[1].rfind("heuristic_v1 10 ", 0), 0U);
  EXPECT_EQ(printed[2].rfind("random_v1 10 ", 0), 0U);
  EXPECT_EQ(lines(err.str()).size(), 10U);
}

TEST(Campaign, SetupFailureIsExitFour) {
  Cluster cluster;
  CampaignOptions campaign;
  campaign.trials = 3;
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_EQ(run_campaign(duel("campfail", "random_v1", "nobody_v1", 0, 10), campaign, inproc_options(cluster), out, err),
            EXIT_SETUP_FAILED);
  campaign.parallel = 0;
  EXPECT_EQ(run_campaign(duel("campzero", "random_v1", "random_v1", 0, 10), campaign, inproc_options(cluster), out, err),
            EXIT_USAGE);
}

TEST(Watch, EndedTrialAndUnknownTrial) {
  Cluster cluster;
  cluster.run(duel("cli-watch", "random_v1", "random_v1", 2, 5));
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_EQ(cmd_watch(std::string("cli-watch"), std::nullopt, inproc_options(cluster), out, err), EXIT_OK);
  EXPECT_EQ(lines(out.str()).back().rfind("cli-watch ended ", 0), 0U);
  EXPECT_EQ(cmd_watch(std::string("nope"), std::nullopt, inproc_options(cluster), out, err), EXIT_NOT_FOUND);
  std::ostringstream all;
  EXPECT_EQ(cmd_watch(std::nullopt, std::nullopt, inproc_options(cluster), all, err), EXIT_OK);
  EXPECT_EQ(all.str(), "cli-watch ended env_terminal\n");
}

TEST(Watch, CountStopsAfterThatManyEndedTrials) {
  Cluster cluster;
  std::ostringstream out;
  std::ostringstream err;
  std::thread starter([&] {
    std::this_thread::sleep_for(Millis(200));
    for (int i = 0; i < 3; ++i) {
      cluster.orchestrator().start_trial(duel("cnt-" + std::to_string(i), "random_v1", "random_v1", 1, 5));
    }
  });
  EXPECT_EQ(cmd_watch(std::nullopt, std::size_t{3}, inproc_options(cluster), out, err), EXIT_OK);
  starter.join();
  int ended = 0;
  for (const auto& line : lines(out.str())) {
    ended += line.find(" ended ") != std::string::npos ? 1 : 0;
  }
  EXPECT_EQ(ended, 3);
}

TEST(Terminate, WaitsForTheEndAndRejectsUnknownTrials) {
  Cluster cluster;
  auto id = cluster.orchestrator().start_trial(duel("cli-term", "random_v1", "random_v1", 1, 100000));
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_EQ(cmd_terminate(id, inproc_options(cluster), out, err), EXIT_OK);
  EXPECT_EQ(out.str(), "cli-term ended client_requested\n");
  EXPECT_EQ(cmd_terminate(id, inproc_options(cluster), out, err), EXIT_NOT_FOUND);
  EXPECT_EQ(cmd_terminate("never", inproc_options(cluster), out, err), EXIT_NOT_FOUND);
}

TEST(Replay, SummaryRewardsAndCorruption) {
  Cluster cluster;
  cluster.run(duel("cli-replay", "heuristic_v1", "random_v1", 5, 50));
  const auto log = cluster.log_for("cli-replay");
  auto result = replay(log);
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(cmd_replay(log, ReplayMode::summary, "", out, err), EXIT_OK);
  auto summary = lines(out.str());
  ASSERT_EQ(summary.size(), 5U);
  EXPECT_EQ(summary[0], "trial cli-replay");
  EXPECT_EQ(summary[1], fmt::format("ticks {}", result.samples.size()));
  EXPECT_EQ(summary[2], "end_reason " + result.footer->end_reason);
  EXPECT_EQ(summary[3], fmt::format("total a {:.6f}", result.total("a")));

  std::ostringstream rewards;
  ASSERT_EQ(cmd_replay(log, ReplayMode::rewards, "b", rewards, err), EXIT_OK);
  EXPECT_EQ(lines(rewards.str()).size(), result.samples.size());
  EXPECT_EQ(cmd_replay(log, ReplayMode::rewards, "zz", out, err), EXIT_USAGE);

  TempDir dir;
  std::ifstream in(log, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  bytes[bytes.size() / 2] = '\xff';
  std::ofstream(dir.path() / "corrupt.twlog", std::ios::binary) << bytes;
  EXPECT_EQ(cmd_replay(dir.path() / "corrupt.twlog", ReplayMode::summary, "", out, err), EXIT_CORRUPT_LOG);
  EXPECT_EQ(cmd_replay(dir.path() / "missing.twlog", ReplayMode::summary, "", out, err), EXIT_CORRUPT_LOG);
  std::ofstream(dir.path() / "empty.twlog");
  EXPECT_EQ(cmd_replay(dir.path() / "empty.twlog", ReplayMode::summary, "", out, err), EXIT_CORRUPT_LOG);
}

TEST(Metrics, PrintsTheEndpointTable) {
  auto metrics = std::make_shared<Metrics>(0.5);
  for (int i = 0; i < 10; ++i) {
    metrics->record_trial_total("heuristic_v1", 0.75);
  }
  MetricsEndpoint endpoint(metrics, "127.0.0.1", 0);
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(cmd_metrics("127.0.0.1:" + std::to_string(endpoint.port()), out, err), EXIT_OK);
  EXPECT_EQ(out.str(), format_metrics_table(metrics->snapshot()));
  EXPECT_EQ(out.str(), "heuristic_v1 10 0.750000 0.750000 trained\n");
  EXPECT_EQ(cmd_metrics("not-an-endpoint", out, err), EXIT_USAGE);
}

// The installed binary maps the same outcomes to its exit status.
int run_binary(const std::string& args, std::string* output = nullptr) {
  const auto command = std::string(TW_CLI_BINARY) + " " + args + " 2>&1";
  FILE* pipe = popen(command.c_str(), "r");
  std::string text;
  std::array<char, 512> buffer{};
  while (std::fgets(buffer.data(), buffer.size(), pipe) != nullptr) {
    text += buffer.data();
  }
  const int status = pclose(pipe);
  if (output != nullptr) {
    *output = text;
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Binary, ExitCodes) {
  TempDir dir;
  auto config = write_config(dir, "duel.json", Json(duel("bin", "random_v1", "random_v1", 1)));
  std::string output;
  EXPECT_EQ(run_binary("--help", &output), EXIT_OK);
  EXPECT_NE(output.find("campaign"), std::string::npos);
  EXPECT_EQ(run_binary("frobnicate"), EXIT_USAGE);
  EXPECT_EQ(run_binary("replay"), EXIT_USAGE);
  EXPECT_EQ(run_binary("--orchestrator 127.0.0.1:1 start " + config.string()), EXIT_CONNECTION_REFUSED);
  EXPECT_EQ(run_binary("start " + (dir.path() / "missing.json").string()), EXIT_INVALID_CONFIG);
  EXPECT_EQ(run_binary("replay --summary " + (dir.path() / "missing.twlog").string()), EXIT_CORRUPT_LOG);

  Cluster cluster;
  cluster.run(duel("bin-log", "random_v1", "random_v1", 1, 5));
  EXPECT_EQ(run_binary("replay --summary " + cluster.log_for("bin-log").string(), &output), EXIT_OK);
  EXPECT_EQ(output.rfind("trial bin-log\nticks 5\n", 0), 0U);
}

TEST(Binary, TalksToAnOrchestratorOverTcp) {
  Cluster cluster;
  const auto port = cluster.orchestrator().listen_tcp("127.0.0.1", 0);
  const auto address = "--orchestrator 127.0.0.1:" + std::to_string(port);
  TempDir dir;
  auto config = write_config(dir, "duel.json", Json(duel("tcp", "heuristic_v1", "random_v1", 1, 30)));
  std::string output;
  EXPECT_EQ(run_binary(address + " campaign " + config.string() + " --trials 4 --parallel 2", &output), EXIT_OK);
  EXPECT_NE(output.find("campaign trials 4 ended 4 parallel 2"), std::string::npos);
  EXPECT_EQ(run_binary(address + " watch tcp-00003", &output), EXIT_OK);
  EXPECT_NE(output.find("tcp-00003 ended"), std::string::npos);
  EXPECT_EQ(run_binary(address + " terminate tcp-00000"), EXIT_NOT_FOUND);
  EXPECT_EQ(run_binary(address + " watch nothing-here"), EXIT_NOT_FOUND);
}

}  // namespace
}  // namespace tw::cli
