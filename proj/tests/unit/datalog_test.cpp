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

#include <fstream>
#include <random>

#include "support/cluster.h"
#include "trialworks/datalog.h"
#include "trialworks/error.h"

namespace tw {
namespace {

using testing::TempDir;

const ParticipantId ENV{ParticipantKind::environment, "env"};
const ParticipantId JUDGE{ParticipantKind::observer, "judge"};

LogHeader header(const std::string& trial_id) {
  LogHeader h;
  h.params.trial_id = trial_id;
  h.params.env_implementation = "quack_arena_v1";
  h.params.actor_slots = {ActorSlot{"a", "player", "random_v1", "inproc://agents", false}};
  h.schemas = {{"player", {{"observation", SchemaRef{"arena_obs", 1}}, {"action", SchemaRef{"arena_action", 1}}}}};
  h.start_time_ms = 1234;
  return h;
}

TickSample sample(const std::string& trial_id, std::uint64_t tick, std::vector<Reward> rewards = {}) {
  TickSample s;
  s.trial_id = trial_id;
  s.tick_id = tick;
  s.observations["a"] = {{"tick", tick}};
  s.actions["a"] = TickAction{{{"fire", false}, {"strafe", 0.0}, {"forward", 0.0}, {"rotate", 0.0}}, tick % 2 == 0};
  s.rewards_received = std::move(rewards);
  return s;
}

Reward reward(double value, double confidence, const ParticipantId& source, std::uint64_t target) {
  return Reward{value, confidence, source, "a", target};
}

// Writes a log whose tick t carries an env reward for t plus any extras, and returns the ledger used.
RewardLedger write_log(const std::filesystem::path& path, std::uint64_t ticks,
                       std::map<std::uint64_t, std::vector<Reward>> extra = {}) {
  DatalogWriter writer(path);
  RewardLedger ledger;
  writer.append_header(header("t"));
  for (std::uint64_t t = 0; t < ticks; ++t) {
    std::vector<Reward> rewards{reward(-1.0 / 600.0, 1.0, ENV, t)};
    for (const auto& r : extra[t]) {
      rewards.push_back(r);
    }
    for (const auto& r : rewards) {
      ledger.add(r);
    }
    writer.append_sample(sample("t", t, rewards));
  }
  writer.append_footer(make_footer("max_tick", ticks, ledger, {"a"}));
  return ledger;
}

std::vector<Envelope> frames_of(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<Envelope> out;
  std::span<const std::uint8_t> rest(bytes);
  while (!rest.empty()) {
    auto frame = decode_frame(rest, FrameChannel::storage);
    out.push_back(frame.envelope);
    rest = rest.subspan(frame.consumed);
  }
  return out;
}

TEST(Writer, HeaderSamplesFooterAreFramesInOrder) {
  TempDir dir;
  auto path = log_path_for(dir.path(), "t");
  EXPECT_EQ(path.filename(), "t.twlog");
  write_log(path, 3);
  auto frames = frames_of(path);
  ASSERT_EQ(frames.size(), 5U);
  EXPECT_EQ(frames[0].msg_type, MsgType::log_header);
  EXPECT_EQ(frames[1].msg_type, MsgType::tick_sample);
  EXPECT_EQ(frames[3].tick_id, 2U);
  EXPECT_EQ(frames[4].msg_type, MsgType::log_footer);
}

TEST(Writer, RejectsOutOfOrderParts) {
  TempDir dir;
  DatalogWriter writer(dir.path() / "x.twlog");
  EXPECT_THROW(writer.append_sample(sample("x", 0)), LogOrderError);
  writer.append_header(header("x"));
  EXPECT_THROW(writer.append_header(header("x")), LogOrderError);
  writer.append_sample(sample("x", 2));
  EXPECT_THROW(writer.append_sample(sample("x", 1)), LogOrderError);
  EXPECT_THROW(writer.append_sample(sample("x", 2)), LogOrderError);
  EXPECT_THROW(writer.append_sample(sample("x", 3, {reward(1.0, 1.0, ENV, 4)})), LogOrderError);
  auto orphan = sample("x", 5);
  orphan.observations.clear();
  EXPECT_THROW(writer.append_sample(orphan), LogOrderError);
  writer.append_footer(LogFooter{"max_tick", 1, {}, {}});
  EXPECT_THROW(writer.append_footer(LogFooter{}), LogOrderError);
}

TEST(Writer, UnwritableDirectoryDegrades) {
  DatalogWriter writer("/proc/no-such-dir/t.twlog");
  EXPECT_TRUE(writer.degraded());
  EXPECT_NO_THROW(writer.append_header(header("t")));
  EXPECT_NO_THROW(writer.append_sample(sample("t", 0)));
  // Ordering is still enforced while nothing reaches the disk.
  EXPECT_THROW(writer.append_sample(sample("t", 0)), LogOrderError);
  EXPECT_EQ(writer.samples_written(), 1U);
}

TEST(Replay, FooterMatchesRecomputationAndSamplesRoundTrip) {
  TempDir dir;
  auto path = dir.path() / "t.twlog";
  auto ledger = write_log(path, 4);
  auto result = replay(path);
  ASSERT_TRUE(result.header);
  EXPECT_EQ(*result.header, header("t"));
  ASSERT_TRUE(result.footer);
  EXPECT_FALSE(result.truncated);
  EXPECT_EQ(result.samples.size(), result.footer->total_ticks);
  EXPECT_EQ(result.samples[2].sample, sample("t", 2, {reward(-1.0 / 600.0, 1.0, ENV, 2)}));
  // Footer table recomputed with the aggregation formula over the raw rewards.
  for (const auto& entry : result.footer->aggregates) {
    std::vector<Reward> raw;
    for (const auto& s : result.samples) {
      for (const auto& r : s.sample.rewards_received) {
        if (r.target_actor == entry.actor && r.target_tick == entry.target_tick) {
          raw.push_back(r);
        }
      }
    }
    EXPECT_EQ(aggregate_rewards(raw), entry);
  }
  EXPECT_EQ(result.footer->totals.at("a"), ledger.total("a"));
  EXPECT_EQ(result.total("a"), ledger.total("a"));
}

TEST(Replay, RetroactiveRewardIsAttachedToItsTarget) {
  TempDir dir;
  auto path = dir.path() / "t.twlog";
  write_log(path, 12, {{10, {reward(0.5, 0.5, JUDGE, 4)}}});
  auto result = replay(path);
  const auto& raw = result.samples[10].sample.rewards_received;
  ASSERT_EQ(raw.size(), 2U);
  EXPECT_EQ(raw[1].target_tick, 4U);
  const auto& at4 = result.samples[4].aggregated.at("a");
  const double expected = (-1.0 / 600.0 * 1.0 + 0.5 * 0.5) / 1.5;
  EXPECT_DOUBLE_EQ(at4.value, expected);
  EXPECT_EQ(at4.sources.size(), 2U);
  EXPECT_EQ(result.samples[10].aggregated.at("a").sources.size(), 1U);
}

TEST(Replay, EveryFrameBoundaryPrefixReplays) {
  TempDir dir;
  auto path = dir.path() / "t.twlog";
  write_log(path, 5);
  std::ifstream in(path, std::ios::binary);
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t offset = 0;
  std::size_t frames = 0;
  while (true) {
    auto result = replay_bytes(std::span<const std::uint8_t>(bytes.data(), offset));
    EXPECT_EQ(result.samples.size(), frames == 0 ? 0 : std::min<std::size_t>(frames - 1, 5));
    EXPECT_EQ(result.truncated, offset < bytes.size());
    if (offset == bytes.size()) {
      break;
    }
    offset += decode_frame(std::span<const std::uint8_t>(bytes).subspan(offset), FrameChannel::storage).consumed;
    ++frames;
  }
  // Mid-frame cuts replay the complete prefix too.
  auto cut = replay_bytes(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 3));
  EXPECT_TRUE(cut.truncated);
  EXPECT_EQ(cut.samples.size(), 5U);
}

TEST(Replay, EmptyFileIsTruncated) {
  TempDir dir;
  auto path = dir.path() / "empty.twlog";
  std::ofstream(path).close();
  auto result = replay(path);
  EXPECT_TRUE(result.truncated);
  EXPECT_TRUE(result.samples.empty());
  EXPECT_THROW(sample_batch(path, 1, 0), EmptyLog);
}

TEST(Replay, CorruptFrameReportsOffset) {
  TempDir dir;
  auto path = dir.path() / "t.twlog";
  write_log(path, 2);
  std::ifstream in(path, std::ios::binary);
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto first = decode_frame(bytes, FrameChannel::storage).consumed;
  bytes[first + 4] = '!';
  try {
    replay_bytes(bytes);
    FAIL();
  }
  catch (const ReplayError& exc) {
    EXPECT_EQ(exc.offset(), first);
  }
}

TEST(Replay, TamperedFooterIsDetected) {
  TempDir dir;
  auto path = dir.path() / "t.twlog";
  DatalogWriter writer(path);
  writer.append_header(header("t"));
  RewardLedger ledger;
  ledger.add(reward(1.0, 1.0, ENV, 0));
  writer.append_sample(sample("t", 0, {reward(1.0, 1.0, ENV, 0)}));
  auto footer = make_footer("max_tick", 1, ledger, {"a"});
  footer.totals["a"] = 2.0;
  writer.append_footer(footer);
  EXPECT_THROW(replay(path), ReplayError);
}

TEST(Batch, SingletonAndDeterminism) {
  TempDir dir;
  auto one = dir.path() / "one.twlog";
  write_log(one, 1);
  auto batch = sample_batch(one, 5, 1);
  ASSERT_EQ(batch.size(), 5U);
  for (const auto& t : batch) {
    EXPECT_EQ(t, batch.front());
  }
  EXPECT_EQ(batch.front().reward, -1.0 / 600.0);
  auto ten = dir.path() / "ten.twlog";
  write_log(ten, 10);
  EXPECT_EQ(sample_batch(ten, 50, 99), sample_batch(ten, 50, 99));
}

TEST(Batch, UniformOverTransitions) {
  TempDir dir;
  auto path = dir.path() / "ten.twlog";
  write_log(path, 10);
  constexpr std::size_t DRAWS = 100000;
  auto batch = sample_batch(path, DRAWS, 2026);
  std::map<std::uint64_t, std::size_t> counts;
  for (const auto& t : batch) {
    ++counts[t.tick_id];
  }
  ASSERT_EQ(counts.size(), 10U);
  for (const auto& [tick, count] : counts) {
    const double share = static_cast<double>(count) / DRAWS;
    EXPECT_NEAR(share, 0.10, 0.01) << tick;
  }
}

}  // namespace
}  // namespace tw
