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

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "signals.h"
#include "trialworks/service.h"

int main(int argc, char** argv) {
  CLI::App app{"Trialworks arena environment service"};
  std::string orchestrator = "127.0.0.1:9000";
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  app.add_option("--orchestrator", orchestrator, "Orchestrator to register with");
  app.add_option("--host", host, "Address to bind");
  app.add_option("--port", port, "Port to bind, 0 for any");
  CLI11_PARSE(app, argc, argv);
  try {
    tw::ServiceHost host_service(tw::arena_offers(), tw::serve_arena_session);
    const auto endpoint = host_service.listen_tcp(host, port);
    host_service.register_with(orchestrator);
    spdlog::info("arena serving on {}", endpoint);
    tw::tools::wait_for_signal();
  }
  catch (const std::exception& exc) {
    std::cerr << "tw_arena: " << exc.what() << '\n';
    return 1;
  }
  return 0;
}
