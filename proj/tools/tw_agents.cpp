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

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "signals.h"
#include "trialworks/service.h"

int main(int argc, char** argv) {
  CLI::App app{"Trialworks player agents service (random_v1, heuristic_v1, reinforce_v1)"};
  std::string orchestrator = "127.0.0.1:9000";
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string checkpoint;
  app.add_option("--orchestrator", orchestrator, "Orchestrator to register with");
  app.add_option("--host", host, "Address to bind");
  app.add_option("--port", port, "Port to bind, 0 for any");
  app.add_option("--checkpoint", checkpoint, "Policy checkpoint, loaded if present and saved on exit");
  CLI11_PARSE(app, argc, argv);
  try {
    auto store = std::make_shared<tw::agents::ModelStore>();
    if (!checkpoint.empty() && std::filesystem::exists(checkpoint)) {
      store->replace(tw::agents::load_checkpoint(checkpoint));
      spdlog::info("loaded checkpoint {}", checkpoint);
    }
    tw::AgentService service(store);
    tw::ServiceHost host_service(tw::agent_offers(), service.handler());
    const auto endpoint = host_service.listen_tcp(host, port);
    host_service.register_with(orchestrator);
    spdlog::info("agents serving on {}", endpoint);
    tw::tools::wait_for_signal();
    host_service.stop();
    if (!checkpoint.empty()) {
      tw::agents::save_checkpoint(*store->snapshot(), checkpoint);
      spdlog::info("saved checkpoint {} after {} updates", checkpoint, store->updates());
    }
  }
  catch (const std::exception& exc) {
    std::cerr << "tw_agents: " << exc.what() << '\n';
    return 1;
  }
  return 0;
}
