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

#include "trialworks/metrics.h"

#include <cmath>

#include <fmt/format.h>

#include "httplib.h"
#include "trialworks/error.h"

namespace tw {

std::optional<double> RewardHistory::moving_average() const {
  if (totals.size() < METRICS_WINDOW) {
    return std::nullopt;
  }
  double sum = 0.0;
  for (auto it = totals.end() - METRICS_WINDOW; it != totals.end(); ++it) {
    sum += *it;
  }
  return sum / static_cast<double>(METRICS_WINDOW);
}

bool RewardHistory::is_trained() const {
  auto average = moving_average();
  return average.has_value() && *average > threshold;
}

void Metrics::record_trial_total(const std::string& implementation, double total) {
  if (!std::isfinite(total)) {
    throw MetricsError(fmt::format("non-finite total for {}", implementation));
  }
  const std::lock_guard lg(m_lock);
  auto& history = m_histories[implementation];
  history.implementation = implementation;
  history.threshold = m_threshold;
  history.totals.push_back(total);
}

std::optional<RewardHistory> Metrics::history(const std::string& implementation) const {
  const std::lock_guard lg(m_lock);
  auto it = m_histories.find(implementation);
  if (it == m_histories.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::optional<double> Metrics::moving_average(const std::string& implementation) const {
  auto h = history(implementation);
  return h ? h->moving_average() : std::nullopt;
}

bool Metrics::is_trained(const std::string& implementation) const {
  auto h = history(implementation);
  return h && h->is_trained();
}

std::vector<MetricsRow> Metrics::snapshot() const {
  const std::lock_guard lg(m_lock);
  std::vector<MetricsRow> rows;
  for (const auto& [name, history] : m_histories) {
    rows.push_back(MetricsRow{name, history.totals.size(), history.totals.empty() ? 0.0 : history.totals.back(),
                              history.moving_average(), history.is_trained()});
  }
  return rows;
}

std::string format_metrics_table(const std::vector<MetricsRow>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += fmt::format("{} {} {:.6f} {} {}\n", row.implementation, row.trial_count, row.last_total,
                       row.moving_average ? fmt::format("{:.6f}", *row.moving_average) : std::string("-"),
                       row.trained ? "trained" : "untrained");
  }
  return out;
}

MetricsEndpoint::MetricsEndpoint(std::shared_ptr<const Metrics> metrics, const std::string& host, int port) :
    m_metrics(std::move(metrics)), m_server(std::make_unique<httplib::Server>()) {
  m_server->Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(format_metrics_table(m_metrics->snapshot()), "text/plain");
  });
  if (port == 0) {
    m_port = m_server->bind_to_any_port(host);
  }
  else {
    m_port = m_server->bind_to_port(host, port) ? port : -1;
  }
  if (m_port <= 0) {
    throw TransportError(fmt::format("cannot bind metrics endpoint on {}:{}", host, port));
  }
  m_thread = std::thread([this]() { m_server->listen_after_bind(); });
}

MetricsEndpoint::~MetricsEndpoint() {
  m_server->stop();
  if (m_thread.joinable()) {
    m_thread.join();
  }
}

}  // namespace tw
