#include "mompo/replay.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <map>
#include <thread>

using namespace mompo;

namespace {

// States encode (episode, step) so samples can be traced back.
Trajectory episode(int id, int length, bool terminal = true) {
  std::vector<Transition> ts;
  for (int t = 0; t < length; ++t) {
    Transition tr;
    tr.state = Vector{{static_cast<double>(id), static_cast<double>(t)}};
    tr.next_state = Vector{{static_cast<double>(id), static_cast<double>(t + 1)}};
    tr.action = t % 2;
    tr.rewards = Vector{{1.0, -0.5}};
    tr.behavior_prob = 0.5;
    tr.terminal = terminal && t + 1 == length;
    ts.push_back(tr);
  }
  return Trajectory::from_transitions(std::move(ts), 0.9);
}

}  // namespace

TEST(Replay, EvictsWholeOldestTrajectories) {
  ReplayBuffer rb(10);
  rb.append(episode(0, 4));
  rb.append(episode(1, 4));
  rb.append(episode(2, 4));  // 12 > 10: episode 0 goes
  EXPECT_EQ(rb.size(), 8u);
  EXPECT_EQ(rb.num_trajectories(), 2u);
  EXPECT_EQ(rb.write_count(), 12u);
  EXPECT_EQ(rb.snapshot().front().transitions.front().state(0), 1.0);
  EXPECT_THROW(rb.append(episode(3, 11)), ConfigError);
  EXPECT_THROW(rb.append(Trajectory{}), ConfigError);
}

TEST(Replay, TransitionSamplingIsUniform) {
  ReplayBuffer rb(100);
  rb.append(episode(0, 1));
  rb.append(episode(1, 3));
  Rng rng(0);
  std::map<std::pair<int, int>, int> counts;
  const int n = 40000;
  for (const auto& t : rb.sample_transitions(n, rng))
    ++counts[{static_cast<int>(t.state(0)), static_cast<int>(t.state(1))}];
  ASSERT_EQ(counts.size(), 4u);
  for (const auto& [k, c] : counts) EXPECT_NEAR(c / double(n), 0.25, 0.015);
}

TEST(Replay, SequencesNeverCrossEpisodes) {
  ReplayBuffer rb(100);
  for (int e = 0; e < 5; ++e) rb.append(episode(e, 2 + e));
  Rng rng(1);
  for (const auto& w : rb.sample_sequences(500, 4, rng)) {
    ASSERT_FALSE(w.empty());
    ASSERT_LE(w.size(), 4u);
    for (std::size_t i = 1; i < w.size(); ++i) {
      EXPECT_EQ(w[i].state(0), w[0].state(0));
      EXPECT_EQ(w[i].state(1), w[i - 1].state(1) + 1);
      EXPECT_FALSE(w[i - 1].terminal);
    }
  }
}

TEST(Replay, EmptyBufferRefusesToSample) {
  ReplayBuffer rb(10);
  Rng rng(2);
  EXPECT_ANY_THROW(rb.sample_transitions(1, rng));
}

TEST(Replay, SaveLoadRoundTrip) {
  ReplayBuffer rb(100);
  rb.append(episode(0, 3));
  rb.append(episode(1, 2, false));
  const auto path = (std::filesystem::temp_directory_path() / "mompo_replay_test.jsonl").string();
  rb.save(path);
  const ReplayBuffer back = ReplayBuffer::load(path, 100, 0.9);
  std::filesystem::remove(path);
  const auto a = rb.snapshot(), b = back.snapshot();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), b[i].size());
    EXPECT_TRUE(a[i].episode_return.isApprox(b[i].episode_return));
    EXPECT_EQ(a[i].transitions.back().terminal, b[i].transitions.back().terminal);
  }
}

TEST(Replay, ConcurrentAppendsAndSamples) {
  ReplayBuffer rb(500);
  std::atomic<bool> done{false};
  std::vector<std::thread> writers;
  for (int w = 0; w < 3; ++w)
    writers.emplace_back([&rb, w] {
      for (int e = 0; e < 200; ++e) rb.append(episode(w * 1000 + e, 1 + e % 7));
    });
  std::thread reader([&] {
    Rng rng(3);
    while (!done) {
      if (rb.size() == 0) continue;
      // every window is one consistent slice of a single trajectory
      for (const auto& win : rb.sample_sequences(8, 5, rng))
        for (std::size_t i = 1; i < win.size(); ++i) ASSERT_EQ(win[i].state(0), win[0].state(0));
    }
  });
  for (auto& t : writers) t.join();
  done = true;
  reader.join();
  EXPECT_LE(rb.size(), 500u);
  EXPECT_EQ(rb.write_count(), 3u * [] {
    std::uint64_t s = 0;
    for (int e = 0; e < 200; ++e) s += 1 + e % 7;
    return s;
  }());
}
