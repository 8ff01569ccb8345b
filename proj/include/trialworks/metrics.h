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

#ifndef TRIALWORKS_METRICS_H
#define TRIALWORKS_METRICS_H

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace tw {

inline constexpr std::size_t METRICS_WINDOW = 10;

struct RewardHistory {
  std::string implementation;
  std::vector<double> totals;
  double threshold = 0.5;

  // Mean of the last METRICS_WINDOW totals; undefined before the window fills.
  std::optional<double> moving_average() const;
  // Strictly greater than the threshold.
  bool is_trained() const;
};

struct MetricsRow {
  std::string implementation;
  std::size_t trial_count = 0;
  double last_total = 0.0;
  std::optional<double> moving_average;
  bool trained = false;

  bool operator==(const MetricsRow&) const = default;
};

// Per-implementation reward history sink. Appends are serialized; reads are snapshots.
class Metrics {
public:
  explicit Metrics(double threshold = 0.5) : m_threshold(threshold) {}

  // Throws MetricsError on a non-finite total.
  void record_trial_total(const std::string& implementation, double total);
  std::optional<double> moving_average(const std::string& implementation) const;
  bool is_trained(const std::string& implementation) const;
  std::optional<RewardHistory> history(const std::string& implementation) const;
  std::vector<MetricsRow> snapshot() const;
  double threshold() const { return m_threshold; }

private:
  double m_threshold;
  mutable std::mutex m_lock;
  std::map<std::string, RewardHistory> m_histories;
};

// One line per implementation: name, trial count, last total, MA10 ("-" when undefined), trained flag.
std::string format_metrics_table(const std::vector<MetricsRow>& rows);

// Read-only GET /metrics endpoint serving format_metrics_table.
class MetricsEndpoint {
public:
  MetricsEndpoint(std::shared_ptr<const Metrics> metrics, const std::string& host, int port);
  ~MetricsEndpoint();
  int port() const { return m_port; }

private:
  std::shared_ptr<const Metrics> m_metrics;
  std::unique_ptr<httplib::Server> m_server;
  std::thread m_thread;
  int m_port = 0;
};

}  // namespace tw

#endif
