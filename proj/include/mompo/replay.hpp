#pragma once

#include "mompo/types.hpp"

#include <cstdint>
#include <deque>
#include <mutex>
#include <string>
#include <vector>

namespace mompo {

/// Ring buffer of whole trajectories, capacity counted in transitions.
///
/// Appends from several actor threads may run concurrently with sampling by
/// one learner. Each call holds the buffer lock for its whole duration, so a
/// trajectory becomes visible atomically and every sample reads one
/// consistent snapshot. Samples are returned by value.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000);
  ReplayBuffer(ReplayBuffer&& other) noexcept;
  ReplayBuffer& operator=(ReplayBuffer&&) = delete;

  /// Stores `trajectory`, evicting the oldest trajectories until it fits.
  void append(Trajectory trajectory);

  std::size_t size() const;
  std::size_t num_trajectories() const;
  std::size_t capacity() const { return capacity_; }
  /// Total transitions ever appended.
  std::uint64_t write_count() const;

  /// Uniform with replacement over stored transitions.
  std::vector<Transition> sample_transitions(std::size_t count, Rng& rng) const;
  std::vector<Vector> sample_states(std::size_t count, Rng& rng) const;
  /// Windows of up to `length` consecutive transitions starting at a
  /// uniformly drawn transition; windows stop at the end of their episode.
  std::vector<std::vector<Transition>> sample_sequences(std::size_t count, std::size_t length,
                                                        Rng& rng) const;

  std::vector<Trajectory> snapshot() const;

  /// Newline-delimited transition records (see serialize.hpp).
  void save(const std::string& path) const;
  static ReplayBuffer load(const std::string& path, std::size_t capacity, double discount);

 private:
  std::pair<std::size_t, std::size_t> locate(std::size_t flat) const;
  void rebuild_index();

  mutable std::mutex mutex_;
  std::deque<Trajectory> trajectories_;
  std::vector<std::size_t> ends_;  // cumulative transition counts
  std::size_t size_ = 0;
  std::size_t capacity_;
  std::uint64_t writes_ = 0;
};

}  // namespace mompo
