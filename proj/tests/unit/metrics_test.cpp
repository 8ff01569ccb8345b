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

#include <limits>
#include <random>
#include <thread>

#include "httplib.h"
#include "trialworks/error.h"
#include "trialworks/metrics.h"

namespace tw {
namespace {

TEST(History, MovingAverageNeedsAFullWindow) {
  Metrics metrics;
  for (int i = 0; i < 9; ++i) {
    metrics.record_trial_total("h", 1.0);
  }
  EXPECT_FALSE(metrics.moving_average("h").has_value());
  EXPECT_FALSE(metrics.is_trained("h"));
  metrics.record_trial_total("h", 1.0);
  EXPECT_EQ(metrics.moving_average("h"), 1.0);
  EXPECT_FALSE(metrics.moving_average("unknown").has_value());
  EXPECT_FALSE(metrics.is_trained("unknown"));
}

TEST(History, SlidingMeanOverLastTen) {
  Metrics metrics;
  for (int i = 0; i < 5; ++i) {
    metrics.record_trial_total("h", 0.0);
  }
  for (int i = 0; i < 10; ++i) {
    metrics.record_trial_total("h", 1.0);
  }
  EXPECT_EQ(metrics.moving_average("h"), 1.0);
  metrics.record_trial_total("h", 0.0);
  EXPECT_DOUBLE_EQ(*metrics.moving_average("h"), 0.9);
}

TEST(History, ThresholdIsStrict) {
  Metrics metrics(0.5);
  for (int i = 0; i < 10; ++i) {
    metrics.record_trial_total("h", 0.5);
  }
  EXPECT_FALSE(metrics.is_trained("h"));
  metrics.record_trial_total("h", 0.5 + 1e-9);
  EXPECT_TRUE(metrics.is_trained("h"));
}

TEST(History, NonFiniteTotalsAreRejected) {
  Metrics metrics;
  EXPECT_THROW(metrics.record_trial_total("h", std::numeric_limits<double>::quiet_NaN()), MetricsError);
  EXPECT_THROW(metrics.record_trial_total("h", std::numeric_limits<double>::infinity()), MetricsError);
  EXPECT_FALSE(metrics.history("h").has_value());
}

TEST(History, ConstantSequenceAverageIsTheConstant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> value(-2.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double c = value(rng);
    RewardHistory history{"h", std::vector<double>(10 + i % 7, c), 0.5};
    // Ten equal addends may round; the mean stays within one ulp-scale error of c.
    EXPECT_NEAR(*history.moving_average(), c, 4 * std::numeric_limits<double>::epsilon() * std::abs(c) + 1e-300);
  }
}

TEST(History, TrainedIsMonotoneInTheLastWindow) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> value(-2.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    RewardHistory history{"h", {}, value(rng)};
    const int n = 10 + static_cast<int>(rng() % 10);
    for (int j = 0; j < n; ++j) {
      history.totals.push_back(value(rng));
    }
    const bool before = history.is_trained();
    const auto k = history.totals.size() - 1 - rng() % 10;
    history.totals[k] += std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (before) {
      EXPECT_TRUE(history.is_trained());
    }
  }
}

TEST(Table, OneLinePerImplementation) {
  Metrics metrics(0.5);
  for (int i = 0; i < 10; ++i) {
    metrics.record_trial_total("heuristic_v1", 0.75);
  }
  metrics.record_trial_total("random_v1", -1.25);
  auto rows = metrics.snapshot();
  ASSERT_EQ(rows.size(), 2U);
  EXPECT_EQ(format_metrics_table(rows),
            "heuristic_v1 10 0.750000 0.750000 trained\n"
            "random_v1 1 -1.250000 - untrained\n");
}

TEST(Table, ConcurrentAppendsAreSerialized) {
  Metrics metrics;
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 500; ++i) {
        metrics.record_trial_total("h", 1.0);
      }
    });
  }
  for (auto& thread : threads) {
    thread.join();
  }
  EXPECT_EQ(metrics.history("h")->totals.size(), 4000U);
}

TEST(Endpoint, ServesTheTableOverHttp) {
  auto metrics = std::make_shared<Metrics>(0.5);
  metrics->record_trial_total("random_v1", -1.0);
  MetricsEndpoint endpoint(metrics, "127.0.0.1", 0);
  httplib::Client client("127.0.0.1", endpoint.port());
  auto res = client.Get("/metrics");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "random_v1 1 -1.000000 - untrained\n");
  auto post = client.Post("/metrics", "", "text/plain");
  ASSERT_TRUE(post);
  EXPECT_NE(post->status, 200);
}

}  // namespace
}  // namespace tw
