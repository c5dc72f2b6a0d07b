#include "mompo/replay.hpp"

#include "mompo/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <utility>

namespace mompo {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
}

ReplayBuffer::ReplayBuffer(ReplayBuffer&& other) noexcept : capacity_(other.capacity_) {
  std::lock_guard lock(other.mutex_);
  trajectories_ = std::move(other.trajectories_);
  ends_ = std::move(other.ends_);
  size_ = std::exchange(other.size_, 0);
  writes_ = other.writes_;
}

void ReplayBuffer::rebuild_index() {
  ends_.clear();
  ends_.reserve(trajectories_.size());
  std::size_t total = 0;
  for (const auto& t : trajectories_) {
    total += t.size();
    ends_.push_back(total);
  }
  size_ = total;
}

void ReplayBuffer::append(Trajectory trajectory) {
  if (trajectory.empty()) throw ConfigError("cannot append an empty trajectory");
  if (trajectory.size() > capacity_)
    throw ConfigError("trajectory of " + std::to_string(trajectory.size()) +
                      " transitions exceeds replay capacity " + std::to_string(capacity_));
  std::lock_guard lock(mutex_);
  const std::size_t n = trajectory.size();
  while (size_ + n > capacity_) {
    size_ -= trajectories_.front().size();
    trajectories_.pop_front();
  }
  trajectories_.push_back(std::move(trajectory));
  writes_ += n;
  rebuild_index();
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mutex_);
  return size_;
}

std::size_t ReplayBuffer::num_trajectories() const {
  std::lock_guard lock(mutex_);
  return trajectories_.size();
}

std::uint64_t ReplayBuffer::write_count() const {
  std::lock_guard lock(mutex_);
  return writes_;
}

std::pair<std::size_t, std::size_t> ReplayBuffer::locate(std::size_t flat) const {
  const auto it = std::upper_bound(ends_.begin(), ends_.end(), flat);
  const auto traj = static_cast<std::size_t>(it - ends_.begin());
  const std::size_t begin = traj == 0 ? 0 : ends_[traj - 1];
  return {traj, flat - begin};
}

std::vector<Transition> ReplayBuffer::sample_transitions(std::size_t count, Rng& rng) const {
  std::lock_guard lock(mutex_);
  if (size_ == 0) throw ConfigError("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<Transition> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto [traj, step] = locate(pick(rng));
    out.push_back(trajectories_[traj].transitions[step]);
  }
  return out;
}

std::vector<Vector> ReplayBuffer::sample_states(std::size_t count, Rng& rng) const {
  std::lock_guard lock(mutex_);
  if (size_ == 0) throw ConfigError("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<Vector> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto [traj, step] = locate(pick(rng));
    out.push_back(trajectories_[traj].transitions[step].state);
  }
  return out;
}

std::vector<std::vector<Transition>> ReplayBuffer::sample_sequences(std::size_t count, std::size_t length,
                                                                    Rng& rng) const {
  if (length == 0) throw ConfigError("sequence length must be >= 1");
  std::lock_guard lock(mutex_);
  if (size_ == 0) throw ConfigError("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::vector<Transition>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto [traj, step] = locate(pick(rng));
    const auto& tr = trajectories_[traj].transitions;
    const std::size_t stop = std::min(tr.size(), step + length);
    out.emplace_back(tr.begin() + static_cast<std::ptrdiff_t>(step), tr.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return out;
}

std::vector<Trajectory> ReplayBuffer::snapshot() const {
  std::lock_guard lock(mutex_);
  return {trajectories_.begin(), trajectories_.end()};
}

void ReplayBuffer::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  write_transitions(out, snapshot());
}

ReplayBuffer ReplayBuffer::load(const std::string& path, std::size_t capacity, double discount) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  ReplayBuffer buffer(capacity);
  for (auto& t : read_transitions(in, discount)) buffer.append(std::move(t));
  return buffer;
}

}  // namespace mompo
