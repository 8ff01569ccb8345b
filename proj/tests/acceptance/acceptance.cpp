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

// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit status on any failure.
// Run with criterion names as arguments to select a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <iterator>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "support/cluster.h"
#include "support/fuzz.h"
#include "support/gradient.h"
#include "support/scripted.h"
#include "trialworks/agents.h"
#include "trialworks/arena.h"
#include "trialworks/controller.h"
#include "trialworks/datalog.h"
#include "trialworks/registry.h"
#include "trialworks/reward.h"

namespace tw::testing {
namespace {

using namespace std::chrono_literals;
using Seconds = std::chrono::duration<double>;

// Pinned thresholds.
constexpr std::size_t GOLDEN_COUNT = 20;
constexpr int FUZZ_CASES = 100000;
constexpr double GOLDEN_LIMIT_S = 10.0;

constexpr double FORMULA_TOLERANCE = 1e-12;
constexpr std::uint64_t FORMULA_MAX_TICK = 600;
constexpr int SCRIPTED_CLIENT_TRIALS = 5;
constexpr int RANDOM_DUELS = 1000;
constexpr double REWARD_LIMIT_S = 120.0;

constexpr int AGGREGATION_CASES = 10000;
constexpr double AGGREGATION_TOLERANCE = 5e-12;
constexpr int RETRO_TRIALS = 20;
constexpr int LIVE_REPLAY_TRIALS = 100;

constexpr int DETERMINISM_TRIALS = 50;
constexpr double DETERMINISM_LIMIT_S = 300.0;

constexpr int SWAP_TRIALS = 100;
constexpr int SWAP_MIN_WINS = 80;
constexpr int REGISTRY_DRAWS = 10000;
constexpr int REGISTRY_EXPECTED = 5000;
constexpr int REGISTRY_TOLERANCE = 300;

constexpr int LEARNING_SEEDS = 5;
constexpr std::size_t LEARNING_TRIALS = 500;
constexpr std::size_t MA_WINDOW = 10;
constexpr int GRADIENT_INSTANCES = 100;
constexpr double GRADIENT_TOLERANCE = 1e-5;
constexpr double LEARNING_LIMIT_S = 900.0;

constexpr std::size_t CAMPAIGN_TRIALS = 100;
constexpr std::size_t CAMPAIGN_PARALLEL = 8;

constexpr std::size_t BATCH = 50;

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Checks {
public:
  void expect(bool ok, const std::string& what) {
    if (!ok && m_failures.size() < 5) {
      m_failures.push_back(what);
    }
    m_ok = m_ok && ok;
  }
  bool ok() const { return m_ok; }
  std::string failures() const {
    std::string out;
    for (const auto& f : m_failures) {
      out += "; " + f;
    }
    return out;
  }

private:
  bool m_ok = true;
  std::vector<std::string> m_failures;
};

Verdict verdict(const Checks& checks, const std::string& detail) { return {checks.ok(), detail + checks.failures()}; }

cli::ControllerOptions inproc_options(Cluster& cluster) {
  cli::ControllerOptions options;
  options.orchestrator = "inproc://orchestrator";
  options.inproc = cluster.inproc();
  return options;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Starts every trial, then waits for all of them, at most BATCH in flight.
std::vector<TrialState> run_all(Cluster& cluster, const std::vector<TrialParams>& trials) {
  std::vector<TrialState> states;
  for (std::size_t begin = 0; begin < trials.size(); begin += BATCH) {
    const auto end = std::min(trials.size(), begin + BATCH);
    std::vector<std::string> ids;
    for (std::size_t i = begin; i < end; ++i) {
      ids.push_back(cluster.orchestrator().start_trial(trials[i]));
    }
    for (const auto& id : ids) {
      auto state = cluster.orchestrator().wait_until_ended(id, Millis(600000));
      if (!state) {
        throw Error("trial " + id + " did not end");
      }
      states.push_back(*state);
    }
  }
  return states;
}

// ---------------------------------------------------------------------------------------------

Verdict golden_frames() {
  Checks checks;
  auto fixtures = load_golden(TW_GOLDEN_DIR);
  checks.expect(fixtures.size() == GOLDEN_COUNT, fmt::format("{} fixtures", fixtures.size()));
  std::size_t exact = 0;
  for (const auto& fixture : fixtures) {
    const bool encodes = encode_frame(fixture.envelope) == fixture.frame;
    const auto decoded = decode_frame(fixture.frame);
    const bool decodes = decoded.envelope == fixture.envelope && decoded.consumed == fixture.frame.size();
    checks.expect(encodes && decodes, fixture.name);
    exact += encodes && decodes ? 1 : 0;
  }
  std::mt19937_64 rng(20260101);
  int round_trips = 0;
  for (int i = 0; i < FUZZ_CASES; ++i) {
    const auto envelope = fuzz_envelope(rng);
    const auto frame = encode_frame(envelope);
    const auto decoded = decode_frame(frame);
    const bool ok = decoded.envelope == envelope && decoded.consumed == frame.size() && encode_frame(decoded.envelope) == frame;
    round_trips += ok ? 1 : 0;
    checks.expect(ok, fmt::format("fuzz case {}", i));
  }
  return verdict(checks, fmt::format("{}/{} fixtures byte-exact, {}/{} fuzzed round trips", exact, fixtures.size(), round_trips,
                                     FUZZ_CASES));
}

// ---------------------------------------------------------------------------------------------

double expected_winner_total(std::uint64_t k) { return 1.0 - static_cast<double>(k) / FORMULA_MAX_TICK; }
double expected_loser_total(std::uint64_t k) { return -1.0 - static_cast<double>(k - 1) / FORMULA_MAX_TICK; }

bool near(double a, double b) { return std::abs(a - b) <= FORMULA_TOLERANCE; }

// A stationary pair facing each other; A fires so that B falls on step k - 1.
bool scripted_arena_duel(std::uint64_t k, std::string& why) {
  arena::ArenaState state;
  state.config.max_tick = FORMULA_MAX_TICK;
  arena::PlayerState a;
  a.name = "a";
  a.position = {30, 50};
  a.opponents_at_start = 1;
  arena::PlayerState b = a;
  b.name = "b";
  b.team = 1;
  b.position = {50, 50};
  b.theta = std::numbers::pi;
  state.players = {a, b};
  // Flight time measured on a scratch copy, then the shot is placed to land on step k - 1.
  auto probe = state;
  std::uint64_t flight = 0;
  while (probe.players[1].alive) {
    arena::arena_step(probe, {{"a", arena::ArenaAction{flight == 0, 0, 0, 0}}});
    ++flight;
  }
  if (k < flight) {
    why = "k shorter than the flight time";
    return false;
  }
  const auto fire_step = k - flight;
  double total_a = 0.0;
  double total_b = 0.0;
  std::uint64_t step = 0;
  while (true) {
    auto result = arena::arena_step(state, {{"a", arena::ArenaAction{step == fire_step, 0, 0, 0}}});
    for (const auto& r : result.rewards) {
      (r.target_actor == "a" ? total_a : total_b) += r.value;
    }
    ++step;
    if (result.terminal) {
      break;
    }
  }
  if (step != k || state.players[1].alive) {
    why = fmt::format("k={} ended after {} steps", k, step);
    return false;
  }
  if (!near(total_a, expected_winner_total(k)) || !near(total_b, expected_loser_total(k))) {
    why = fmt::format("k={} totals {} {}", k, total_a, total_b);
    return false;
  }
  return true;
}

// A finished 1v1 ends one of three ways: one elimination on step k - 1, a mutual elimination on
// that step (each loses 1 and gains 1), or no elimination by the tick limit.
bool duel_totals_conform(double ta, double tb, std::uint64_t k) {
  const double win = expected_winner_total(k);
  const double lose = expected_loser_total(k);
  const double mutual = -static_cast<double>(k - 1) / FORMULA_MAX_TICK;
  const bool single = (near(ta, win) && near(tb, lose)) || (near(tb, win) && near(ta, lose));
  const bool both = near(ta, mutual) && near(tb, mutual);
  const bool timeout = k == FORMULA_MAX_TICK && near(ta, -1.0) && near(tb, -1.0);
  return single || both || timeout;
}

Verdict reward_formula() {
  Checks checks;
  int arena_cases = 0;
  for (std::uint64_t k : {12ULL, 13ULL, 57ULL, 100ULL, 299ULL, 450ULL, 599ULL, 600ULL}) {
    std::string why;
    checks.expect(scripted_arena_duel(k, why), why);
    ++arena_cases;
  }

  // Full stack: two headless clients in the arena, A aims with the heuristic, B stands still.
  int client_trials = 0;
  {
    Cluster cluster;
    for (std::uint64_t seed = 1; client_trials < SCRIPTED_CLIENT_TRIALS && seed <= 40; ++seed) {
      TrialParams params;
      params.trial_id = fmt::format("scripted-{}", seed);
      params.env_implementation = std::string(arena::IMPLEMENTATION);
      params.actor_slots = {client_slot("a"), client_slot("b")};
      params.max_tick = FORMULA_MAX_TICK;
      params.seed = seed;
      auto id = cluster.orchestrator().start_trial(params);
      HeadlessClient shooter(Dialer(cluster.inproc()).dial("inproc://orchestrator"), "a");
      HeadlessClient target(Dialer(cluster.inproc()).dial("inproc://orchestrator"), "b");
      shooter.join(id);
      target.join(id);
      auto idle = std::async(std::launch::async, [&] {
        return target.play([](std::uint64_t, const Json&) { return std::optional<Json>(arena::action_to_json({})); });
      });
      auto shots = shooter.play(
          [](std::uint64_t, const Json& obs) { return std::optional<Json>(arena::action_to_json(agents::heuristic_act(obs))); });
      auto stood = idle.get();
      cluster.orchestrator().wait_until_ended(id, 60s);
      auto result = replay(cluster.log_for(id));
      const auto k = result.footer->total_ticks;
      if (result.total("b") > -1.0) {
        continue;  // never hit within the trial; no elimination to check
      }
      ++client_trials;
      checks.expect(near(result.total("a"), expected_winner_total(k)) && near(result.total("b"), expected_loser_total(k)),
                    fmt::format("client trial seed {} k={} totals {} {}", seed, k, result.total("a"), result.total("b")));
      // The live stream carries the same per-tick values.
      double live_b = 0.0;
      for (const auto& e : stood) {
        if (e.msg_type == MsgType::reward) {
          live_b += e.payload.at("aggregated").at("value").get<double>();
        }
      }
      checks.expect(near(live_b, expected_loser_total(k)), fmt::format("live stream of b in seed {}", seed));
    }
  }
  checks.expect(client_trials == SCRIPTED_CLIENT_TRIALS, fmt::format("{} client eliminations", client_trials));

  // Randomized 1v1 through the full stack.
  Cluster cluster;
  std::mt19937_64 rng(6001);
  const std::vector<std::string> impls{"random_v1", "heuristic_v1"};
  std::vector<TrialParams> trials;
  for (int i = 0; i < RANDOM_DUELS; ++i) {
    const auto& impl_a = impls[rng() % 2];
    const auto& impl_b = impls[rng() % 2];
    const auto seed = rng();
    trials.push_back(duel(fmt::format("bound-{:04d}", i), impl_a, impl_b, seed, FORMULA_MAX_TICK));
  }
  run_all(cluster, trials);
  int in_bounds = 0;
  int conforming = 0;
  for (const auto& params : trials) {
    auto result = replay(cluster.log_for(params.trial_id));
    const double ta = result.total("a");
    const double tb = result.total("b");
    const bool bounded = ta > -2.0 && ta <= 1.0 && tb > -2.0 && tb <= 1.0;
    in_bounds += bounded ? 1 : 0;
    checks.expect(bounded, fmt::format("{} totals {} {}", params.trial_id, ta, tb));
    const bool conform = duel_totals_conform(ta, tb, result.footer->total_ticks);
    conforming += conform ? 1 : 0;
    checks.expect(conform, fmt::format("{} k={} totals {:.17g} {:.17g}", params.trial_id, result.footer->total_ticks, ta, tb));
  }
  return verdict(checks, fmt::format("{} scripted arena duels, {} client-driven eliminations exact to {:g}; {}/{} random duels in "
                                     "(-2, 1], {} matching the closed forms",
                                     arena_cases, client_trials, FORMULA_TOLERANCE, in_bounds, RANDOM_DUELS, conforming));
}

// ---------------------------------------------------------------------------------------------

double weighted_mean_oracle(const std::vector<Reward>& rewards) {
  long double num = 0.0L;
  long double den = 0.0L;
  for (const auto& r : rewards) {
    num += static_cast<long double>(r.value) * r.confidence;
    den += r.confidence;
  }
  return static_cast<double>(num / den);
}

Verdict aggregation_and_retroactivity() {
  Checks checks;
  std::mt19937_64 rng(3003);
  std::uniform_int_distribution<int> count(1, 10);
  std::uniform_real_distribution<double> value(-5.0, 5.0);
  std::uniform_real_distribution<double> conf(1e-3, 1.0);
  int property_cases = 0;
  for (int i = 0; i < AGGREGATION_CASES; ++i) {
    std::vector<Reward> rewards;
    const int n = count(rng);
    for (int j = 0; j < n; ++j) {
      rewards.push_back(Reward{value(rng), conf(rng), {ParticipantKind::actor, fmt::format("s{}", j)}, "a", 3});
    }
    const double base = aggregate_rewards(rewards).value;
    auto permuted = rewards;
    std::shuffle(permuted.begin(), permuted.end(), rng);
    auto split = rewards;
    const auto at = static_cast<std::size_t>(rng() % split.size());
    const double fraction = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    auto part = split[at];
    part.confidence = split[at].confidence * fraction;
    split[at].confidence -= part.confidence;
    split.push_back(part);
    const bool ok = std::abs(base - weighted_mean_oracle(rewards)) <= AGGREGATION_TOLERANCE &&
                    std::abs(aggregate_rewards(permuted).value - base) <= AGGREGATION_TOLERANCE &&
                    std::abs(aggregate_rewards(split).value - base) <= AGGREGATION_TOLERANCE;
    checks.expect(ok, fmt::format("aggregation case {}", i));
    property_cases += ok ? 1 : 0;
  }

  // Retroactive rewards between two headless clients on a scripted environment.
  int retro_ok = 0;
  {
    Cluster cluster;
    ScriptedEnv env(cluster.inproc());
    std::mt19937_64 retro_rng(404);
    for (int i = 0; i < RETRO_TRIALS; ++i) {
      const std::uint64_t window = 1 + retro_rng() % 16;
      const std::uint64_t tick = window + retro_rng() % 10;
      const std::uint64_t d = retro_rng() % (window + 1);
      const double reward_value = std::uniform_real_distribution<double>(-3.0, 3.0)(retro_rng);
      auto params = scripted_params(fmt::format("retro-{}", i), {client_slot("judge"), client_slot("p")}, tick + 3);
      params.retro_window = window;
      auto id = cluster.orchestrator().start_trial(params);
      HeadlessClient judge(Dialer(cluster.inproc()).dial("inproc://orchestrator"), "judge");
      HeadlessClient player(Dialer(cluster.inproc()).dial("inproc://orchestrator"), "p");
      judge.join(id);
      player.join(id);
      const auto act = arena::action_to_json({});
      auto judged = std::async(std::launch::async, [&] {
        return judge.play([&](std::uint64_t t, const Json&) {
          if (t == tick) {
            judge.send_reward(t, "p", t - d, reward_value, 1.0);
          }
          return std::optional<Json>(act);
        });
      });
      auto received = player.play([&](std::uint64_t, const Json&) { return std::optional<Json>(act); });
      judged.get();
      cluster.orchestrator().wait_until_ended(id, 30s);
      std::vector<Envelope> live;
      std::copy_if(received.begin(), received.end(), std::back_inserter(live),
                   [](const Envelope& e) { return e.msg_type == MsgType::reward; });
      auto result = replay(cluster.log_for(id));
      bool ok = live.size() == 1;
      if (ok) {
        auto aggregated = live[0].payload.at("aggregated").get<AggregatedReward>();
        const auto& replayed = result.samples.at(tick - d).aggregated;
        ok = live[0].tick_id == tick && aggregated.target_tick == tick - d && aggregated.value == reward_value &&
             replayed.contains("p") && replayed.at("p") == aggregated && result.total("p") == reward_value;
      }
      checks.expect(ok, fmt::format("retro trial {} (t={}, d={}, window={})", i, tick, d, window));
      retro_ok += ok ? 1 : 0;
    }
  }

  // Agent-side live aggregates against the replayed log, exactly.
  std::mutex lock;
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, double>> live;
  ClusterOptions options;
  options.episode_observer = [&](const EpisodeRecord& record) {
    const std::lock_guard lg(lock);
    live[{record.trial_id, record.actor_name}] = record.rewards;
  };
  Cluster cluster(options);
  std::mt19937_64 trial_rng(5005);
  const std::vector<std::string> impls{"random_v1", "heuristic_v1", "reinforce_v1"};
  std::vector<TrialParams> trials;
  for (int i = 0; i < LIVE_REPLAY_TRIALS; ++i) {
    const auto& impl_a = impls[trial_rng() % 3];
    const auto& impl_b = impls[trial_rng() % 3];
    const auto seed = trial_rng();
    const auto max_tick = 20 + trial_rng() % 581;
    trials.push_back(duel(fmt::format("live-{:03d}", i), impl_a, impl_b, seed, max_tick));
  }
  run_all(cluster, trials);
  int equal = 0;
  for (const auto& params : trials) {
    auto result = replay(cluster.log_for(params.trial_id));
    bool ok = true;
    for (const auto* actor : {"a", "b"}) {
      std::map<std::uint64_t, double> replayed;
      for (const auto& [key, aggregated] : result.aggregates) {
        if (key.first == actor) {
          replayed[key.second] = aggregated.value;
        }
      }
      const std::lock_guard lg(lock);
      auto it = live.find({params.trial_id, actor});
      ok = ok && it != live.end() && it->second == replayed && !replayed.empty();
    }
    checks.expect(ok, params.trial_id + " live differs from replay");
    equal += ok ? 1 : 0;
  }
  return verdict(checks, fmt::format("{}/{} aggregation property cases, {}/{} retroactive rewards live == replay, {}/{} trials "
                                     "with identical live and replayed aggregates",
                                     property_cases, AGGREGATION_CASES, retro_ok, RETRO_TRIALS, equal, LIVE_REPLAY_TRIALS));
}

// ---------------------------------------------------------------------------------------------

Verdict determinism() {
  Checks checks;
  std::string runs[2];
  for (auto& bytes : runs) {
    Cluster cluster;
    cluster.run(duel("det-single", "heuristic_v1", "random_v1", 99, 600));
    bytes = read_bytes(cluster.log_for("det-single"));
  }
  checks.expect(!runs[0].empty() && runs[0] == runs[1], "two runs differ");

  std::vector<TrialParams> trials;
  for (int i = 0; i < DETERMINISM_TRIALS; ++i) {
    trials.push_back(duel(fmt::format("det-{:02d}", i), i % 3 == 0 ? "random_v1" : "heuristic_v1", "random_v1",
                          static_cast<std::uint64_t>(1000 + i), 600));
  }
  Cluster sequential;
  for (const auto& params : trials) {
    sequential.run(params);
  }
  Cluster concurrent;
  run_all(concurrent, trials);
  int identical = 0;
  for (const auto& params : trials) {
    const auto a = read_bytes(sequential.log_for(params.trial_id));
    const auto b = read_bytes(concurrent.log_for(params.trial_id));
    const bool same = !a.empty() && a == b;
    identical += same ? 1 : 0;
    checks.expect(same, params.trial_id + " differs between sequential and concurrent runs");
  }
  return verdict(checks, fmt::format("repeat run byte-identical: {}; {}/{} logs byte-identical sequential vs concurrent",
                                     runs[0] == runs[1] ? "yes" : "no", identical, DETERMINISM_TRIALS));
}

// ---------------------------------------------------------------------------------------------

Verdict swapping_and_balancing() {
  Checks checks;
  Cluster cluster;
  const auto base = duel("swap-base", "heuristic_v1", "random_v1", 5, 600);
  auto flipped = base;
  flipped.trial_id = "swap-flipped";
  for (auto& slot : flipped.actor_slots) {
    slot.implementation = slot.implementation == "heuristic_v1" ? "random_v1" : "heuristic_v1";
  }
  // The only differences are the implementation names (and the trial id used to tell the logs apart).
  for (const auto& op : Json::diff(Json(base), Json(flipped))) {
    const auto path = op.at("path").get<std::string>();
    const bool allowed = path == "/trial_id" || path.ends_with("/implementation");
    checks.expect(allowed, "swap touched " + path);
  }
  for (const auto& params : {base, flipped}) {
    auto state = cluster.run(params);
    checks.expect(state.reason != "setup_failed", params.trial_id + " failed setup");
    auto header = replay(cluster.log_for(params.trial_id)).header;
    // Endpoints are filled in by the registry; names and implementations must come through unchanged.
    bool same = header && header->params.actor_slots.size() == params.actor_slots.size();
    for (std::size_t i = 0; same && i < params.actor_slots.size(); ++i) {
      same = header->params.actor_slots[i].actor_name == params.actor_slots[i].actor_name &&
             header->params.actor_slots[i].implementation == params.actor_slots[i].implementation;
    }
    checks.expect(same, params.trial_id + " header slots");
  }

  std::vector<TrialParams> trials;
  for (int i = 0; i < SWAP_TRIALS; ++i) {
    const bool heuristic_first = i % 2 == 0;
    trials.push_back(duel(fmt::format("versus-{:03d}", i), heuristic_first ? "heuristic_v1" : "random_v1",
                          heuristic_first ? "random_v1" : "heuristic_v1", static_cast<std::uint64_t>(7000 + i), 600));
  }
  run_all(cluster, trials);
  int wins = 0;
  for (int i = 0; i < SWAP_TRIALS; ++i) {
    auto result = replay(cluster.log_for(trials[static_cast<std::size_t>(i)].trial_id));
    const bool heuristic_first = i % 2 == 0;
    const double heuristic = result.total(heuristic_first ? "a" : "b");
    const double random = result.total(heuristic_first ? "b" : "a");
    wins += heuristic > random ? 1 : 0;
  }
  checks.expect(wins >= SWAP_MIN_WINS, fmt::format("heuristic won {}", wins));

  Registry registry;
  registry.register_service("player", "random_v1", "10.0.0.1:7000");
  registry.register_service("player", "random_v1", "10.0.0.2:7000");
  std::map<std::string, int> counts;
  for (int seed = 0; seed < REGISTRY_DRAWS; ++seed) {
    TrialParams params;
    params.env_implementation = std::string(arena::IMPLEMENTATION);
    params.env_endpoint = "inproc://arena";
    params.actor_slots = {ActorSlot{"p", "player", "random_v1", std::nullopt, false}};
    params.seed = static_cast<std::uint64_t>(seed);
    ++counts[*registry.pre_trial_hook(params).actor_slots[0].endpoint];
  }
  std::string spread;
  for (const auto& [endpoint, n] : counts) {
    checks.expect(std::abs(n - REGISTRY_EXPECTED) <= REGISTRY_TOLERANCE, fmt::format("{} drawn {} times", endpoint, n));
    spread += fmt::format(" {}", n);
  }
  checks.expect(counts.size() == 2, "endpoints drawn");
  return verdict(checks, fmt::format("swap needs only implementation changes; heuristic won {}/{} (>= {}); registry draws{} "
                                     "(each {} +/- {})",
                                     wins, SWAP_TRIALS, SWAP_MIN_WINS, spread, REGISTRY_EXPECTED, REGISTRY_TOLERANCE));
}

// ---------------------------------------------------------------------------------------------

double mean_of(const std::vector<double>& values, std::size_t begin, std::size_t end) {
  return std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(begin), values.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
         static_cast<double>(end - begin);
}

Verdict learning_signal() {
  Checks checks;
  int improved = 0;
  std::string per_seed;
  for (int seed = 1; seed <= LEARNING_SEEDS; ++seed) {
    Cluster cluster;
    cli::CampaignOptions campaign;
    campaign.parallel = 1;
    campaign.trials = LEARNING_TRIALS;
    campaign.base_seed = static_cast<std::uint64_t>(seed) * 100000;
    cli::CampaignReport report;
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run_campaign(duel(fmt::format("learn{}", seed), "reinforce_v1", "random_v1", 0, 600), campaign,
                                       inproc_options(cluster), out, err, &report);
    checks.expect(code == cli::EXIT_OK, fmt::format("seed {} campaign exit {}", seed, code));
    std::vector<double> totals;
    for (const auto& trial : report.trials) {
      totals.push_back(trial.implementation_totals.count("reinforce_v1") ? trial.implementation_totals.at("reinforce_v1") : 0.0);
    }
    if (totals.size() != LEARNING_TRIALS) {
      continue;
    }
    const double first = mean_of(totals, 0, MA_WINDOW);
    const double last = mean_of(totals, LEARNING_TRIALS - MA_WINDOW, LEARNING_TRIALS);
    const bool better = last > first;
    improved += better ? 1 : 0;
    checks.expect(better, fmt::format("seed {} MA {:.4f} -> {:.4f}", seed, first, last));
    per_seed += fmt::format(" [{:.3f} -> {:.3f}]", first, last);
  }

  std::mt19937_64 rng(8118);
  int gradients = 0;
  double worst = 0.0;
  for (int i = 0; i < GRADIENT_INSTANCES; ++i) {
    auto check = check_policy_gradient(rng);
    worst = std::max(worst, check.relative_error);
    const bool ok = check.relative_error <= GRADIENT_TOLERANCE;
    gradients += ok ? 1 : 0;
    checks.expect(ok, fmt::format("gradient instance {} relative error {:g}", i, check.relative_error));
  }
  return verdict(checks, fmt::format("{}/{} seeds improved the 10-trial moving average{}; {}/{} gradients within {:g} (worst "
                                     "{:.2e})",
                                     improved, LEARNING_SEEDS, per_seed, gradients, GRADIENT_INSTANCES, GRADIENT_TOLERANCE, worst));
}

// ---------------------------------------------------------------------------------------------

Verdict campaign_scale() {
  Checks checks;
  Cluster cluster;
  cli::CampaignOptions campaign;
  campaign.parallel = CAMPAIGN_PARALLEL;
  campaign.trials = CAMPAIGN_TRIALS;
  campaign.base_seed = 424242;
  cli::CampaignReport report;
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run_campaign(duel("scale", "heuristic_v1", "random_v1", 0, 600), campaign, inproc_options(cluster), out,
                                     err, &report);
  checks.expect(code == cli::EXIT_OK, fmt::format("campaign exit {}", code));
  checks.expect(report.ended == CAMPAIGN_TRIALS, fmt::format("{} ended", report.ended));
  checks.expect(report.max_in_flight == CAMPAIGN_PARALLEL, fmt::format("{} in flight at most", report.max_in_flight));
  int consistent = 0;
  std::set<std::string> ids;
  for (const auto& trial : report.trials) {
    ids.insert(trial.trial_id);
    bool ok = false;
    try {
      auto result = replay(trial.log_path);
      ok = !result.truncated && result.footer && result.header && result.header->params.seed == trial.seed &&
           result.samples.size() == result.footer->total_ticks && result.footer->end_reason == trial.end_reason &&
           result.footer->totals.at("a") == trial.implementation_totals.at("heuristic_v1") &&
           result.footer->totals.at("b") == trial.implementation_totals.at("random_v1");
    }
    catch (const std::exception& exc) {
      checks.expect(false, trial.trial_id + ": " + exc.what());
    }
    consistent += ok ? 1 : 0;
    checks.expect(ok, trial.trial_id + " log inconsistent");
  }
  checks.expect(ids.size() == CAMPAIGN_TRIALS, "distinct trial ids");
  std::string counts;
  for (const auto& rows : {report.metrics, cluster.orchestrator().metrics()->snapshot()}) {
    checks.expect(rows.size() == 2, "metrics rows");
    for (const auto& row : rows) {
      checks.expect(row.trial_count == CAMPAIGN_TRIALS, fmt::format("{} count {}", row.implementation, row.trial_count));
      counts += fmt::format(" {}={}", row.implementation, row.trial_count);
    }
  }
  return verdict(checks, fmt::format("{} trials at parallel {}, {} consistent logs, metrics counts{}", report.ended,
                                     report.max_in_flight, consistent, counts));
}

struct Criterion {
  std::string name;
  double limit_s;  // 0 for no runtime bound
  std::function<Verdict()> run;
};

}  // namespace
}  // namespace tw::testing

int main(int argc, char** argv) {
  using namespace tw::testing;
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria{
      {"golden_frames", GOLDEN_LIMIT_S, golden_frames},
      {"reward_formula", REWARD_LIMIT_S, reward_formula},
      {"aggregation_retroactivity", 0.0, aggregation_and_retroactivity},
      {"determinism", DETERMINISM_LIMIT_S, determinism},
      {"swapping_balancing", 0.0, swapping_and_balancing},
      {"learning_signal", LEARNING_LIMIT_S, learning_signal},
      {"campaign_scale", 0.0, campaign_scale},
  };
  const std::set<std::string> selected(argv + 1, argv + argc);
  bool all_pass = true;
  for (const auto& criterion : criteria) {
    if (!selected.empty() && !selected.contains(criterion.name)) {
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    Verdict result;
    try {
      result = criterion.run();
    }
    catch (const std::exception& exc) {
      result = {false, std::string("exception: ") + exc.what()};
    }
    const double elapsed = Seconds(std::chrono::steady_clock::now() - start).count();
    if (criterion.limit_s > 0.0 && elapsed > criterion.limit_s) {
      result.pass = false;
      result.detail += fmt::format("; over the {:.0f} s limit", criterion.limit_s);
    }
    std::cout << (result.pass ? "PASS " : "FAIL ") << criterion.name << ": " << result.detail
              << fmt::format(" ({:.1f} s)", elapsed) << std::endl;
    all_pass = all_pass && result.pass;
  }
  return all_pass ? 0 : 1;
}
