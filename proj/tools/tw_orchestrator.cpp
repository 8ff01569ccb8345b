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
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "signals.h"
#include "trialworks/metrics.h"
#include "trialworks/orchestrator.h"
#include "trialworks/service.h"

int main(int argc, char** argv) {
  using tw::tools::env_or;
  CLI::App app{"Trialworks orchestrator"};
  std::string host = "127.0.0.1";
  auto port = env_or<std::uint16_t>("TW_PORT", 9000);
  auto ws_port = env_or<std::uint16_t>("TW_WS_PORT", 9001);
  auto metrics_port = env_or<int>("TW_METRICS_PORT", 9002);
  auto log_dir = env_or<std::string>("TW_LOG_DIR", "logs");
  auto join_timeout_ms = env_or<long long>("TW_JOIN_TIMEOUT_MS", 30000);
  double threshold = 0.5;
  bool embed = false;
  std::string checkpoint;
  app.add_option("--host", host, "Address to bind");
  app.add_option("--port", port, "Frame port for services and controllers (TW_PORT)");
  app.add_option("--ws-port", ws_port, "Browser socket port for client actors (TW_WS_PORT)");
  app.add_option("--metrics-port", metrics_port, "GET /metrics port, negative to disable (TW_METRICS_PORT)");
  app.add_option("--log-dir", log_dir, "Directory for trial logs (TW_LOG_DIR)");
  app.add_option("--join-timeout-ms", join_timeout_ms, "Client join timeout (TW_JOIN_TIMEOUT_MS)");
  app.add_option("--threshold", threshold, "Trained threshold for the metrics sink");
  app.add_flag("--embed-services", embed, "Also host the arena and the agents in this process");
  app.add_option("--checkpoint", checkpoint, "Policy checkpoint for embedded agents, loaded if present and saved on exit");
  CLI11_PARSE(app, argc, argv);

  try {
    tw::OrchestratorOptions options;
    options.log_dir = log_dir;
    options.join_timeout = tw::Millis(join_timeout_ms);
    options.metrics_threshold = threshold;
    tw::Orchestrator orchestrator(options);
    const auto bound = orchestrator.listen_tcp(host, port);
    const auto ws_bound = orchestrator.listen_ws(host, ws_port);
    spdlog::info("orchestrator on {}:{} (frames) and {}:{} (browser sockets), logs in {}", host, bound, host, ws_bound, log_dir);
    std::optional<tw::MetricsEndpoint> metrics;
    if (metrics_port >= 0) {
      metrics.emplace(orchestrator.metrics(), host, metrics_port);
      spdlog::info("metrics on http://{}:{}/metrics", host, metrics->port());
    }

    std::unique_ptr<tw::ServiceHost> arena;
    std::unique_ptr<tw::AgentService> agent_service;
    std::unique_ptr<tw::ServiceHost> agents;
    if (embed) {
      orchestrator.listen_inproc("orchestrator");
      arena = std::make_unique<tw::ServiceHost>(tw::arena_offers(), tw::serve_arena_session, orchestrator.inproc());
      arena->listen_inproc("arena");
      arena->register_with("inproc://orchestrator");
      auto store = std::make_shared<tw::agents::ModelStore>();
      if (!checkpoint.empty() && std::filesystem::exists(checkpoint)) {
        store->replace(tw::agents::load_checkpoint(checkpoint));
      }
      agent_service = std::make_unique<tw::AgentService>(store);
      agents = std::make_unique<tw::ServiceHost>(tw::agent_offers(), agent_service->handler(), orchestrator.inproc());
      agents->listen_inproc("agents");
      agents->register_with("inproc://orchestrator");
      spdlog::info("embedded arena and agents registered");
    }

    tw::tools::wait_for_signal();
    spdlog::info("shutting down");
    orchestrator.shutdown();
    if (agents) {
      agents->stop();
      arena->stop();
      if (!checkpoint.empty()) {
        tw::agents::save_checkpoint(*agent_service->model()->snapshot(), checkpoint);
      }
    }
  }
  catch (const std::exception& exc) {
    std::cerr << "tw_orchestrator: " << exc.what() << '\n';
    return 1;
  }
  return 0;
}
