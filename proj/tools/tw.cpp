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

#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "trialworks/controller.h"

int main(int argc, char** argv) {
  namespace cli = tw::cli;
  CLI::App app{"Trialworks controller"};
  app.require_subcommand(1);
  cli::ControllerOptions options;
  app.add_option("--orchestrator", options.orchestrator, "Orchestrator address host:port");

  std::string config;
  auto* start = app.add_subcommand("start", "Start one trial and print its id");
  start->add_option("config", config, "TrialParams file")->required();

  cli::CampaignOptions campaign;
  auto* run = app.add_subcommand("campaign", "Run many trials, N at a time, and print a metrics table");
  run->add_option("config", config, "TrialParams file")->required();
  run->add_option("--parallel", campaign.parallel, "Trials in flight")->check(CLI::PositiveNumber);
  run->add_option("--trials", campaign.trials, "Trials in total")->check(CLI::PositiveNumber);
  run->add_option("--base-seed", campaign.base_seed, "Seed of trial 0; trial i uses base + i");
  run->add_option("--threshold", campaign.threshold, "Trained threshold on the 10-trial moving average");

  std::string trial_id;
  bool all = false;
  std::optional<std::size_t> count;
  auto* watch = app.add_subcommand("watch", "Print state transitions until the watched trials end");
  watch->add_option("trial_id", trial_id, "Trial to watch");
  watch->add_flag("--all", all, "Watch every trial");
  watch->add_option("--count", count, "With --all, stop after this many ended trials");

  std::string log;
  bool summary = false;
  std::string rewards_actor;
  auto* replay = app.add_subcommand("replay", "Report on a trial log");
  replay->add_option("log", log, "Log file")->required();
  auto* summary_flag = replay->add_flag("--summary", summary, "Tick count, end reason and totals");
  auto* rewards_opt = replay->add_option("--rewards", rewards_actor, "Aggregated rewards per target tick for one actor");
  summary_flag->excludes(rewards_opt);

  auto* terminate = app.add_subcommand("terminate", "End a trial and wait until it has ended");
  terminate->add_option("trial_id", trial_id, "Trial to end")->required();

  std::string metrics_endpoint{cli::DEFAULT_METRICS_ENDPOINT};
  auto* metrics = app.add_subcommand("metrics", "Print the orchestrator metrics table");
  metrics->add_option("--endpoint", metrics_endpoint, "Metrics endpoint host:port");

  try {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError& exc) {
    return app.exit(exc) == 0 ? 0 : cli::EXIT_USAGE;
  }
  spdlog::set_level(spdlog::level::warn);

  if (*start) {
    return cli::cmd_start(config, options, std::cout, std::cerr);
  }
  if (*run) {
    return cli::cmd_campaign(config, campaign, options, std::cout, std::cerr);
  }
  if (*watch) {
    if (all == !trial_id.empty()) {
      std::cerr << "watch takes either a trial id or --all\n";
      return cli::EXIT_USAGE;
    }
    return cli::cmd_watch(all ? std::nullopt : std::optional<std::string>(trial_id), count, options, std::cout, std::cerr);
  }
  if (*replay) {
    const auto mode = rewards_actor.empty() ? cli::ReplayMode::summary : cli::ReplayMode::rewards;
    return cli::cmd_replay(log, mode, rewards_actor, std::cout, std::cerr);
  }
  if (*terminate) {
    return cli::cmd_terminate(trial_id, options, std::cout, std::cerr);
  }
  return cli::cmd_metrics(metrics_endpoint, std::cout, std::cerr);
}
