#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mompo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, malformed input file or violated precondition on
/// user-supplied data. The CLI maps it to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, gradient or divergence. The CLI maps it to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

struct DiscreteSpace {
  int n = 0;
};

struct BoxSpace {
  Vector lower;
  Vector upper;

  int dim() const { return static_cast<int>(lower.size()); }
  bool contains(const Vector& a) const;
};

using ActionSpace = std::variant<DiscreteSpace, BoxSpace>;

struct EnvSpec {
  int state_dim = 1;
  ActionSpace action_space = DiscreteSpace{1};
  int num_objectives = 1;
  double discount = 0.99;
  int max_episode_steps = 1;

  bool discrete() const { return std::holds_alternative<DiscreteSpace>(action_space); }
  int num_actions() const;  // discrete only
  int action_dim() const;   // box dimension, or 1 for discrete
  void validate() const;
};

/// Per-objective instantaneous rewards r_k(s, a).
using RewardVector = Vector;

/// Throws ConfigError unless `r` has `num_objectives` finite entries.
void check_reward_vector(const RewardVector& r, int num_objectives);

/// A discrete action index or a continuous action vector.
using Action = std::variant<int, Vector>;

int discrete_action(const Action& a);
const Vector& continuous_action(const Action& a);
bool same_action(const Action& a, const Action& b);

struct Transition {
  Vector state;
  Action action;
  RewardVector rewards;
  Vector next_state;
  /// b(a|s) as a probability mass or density, never a log.
  double behavior_prob = 1.0;
  bool terminal = false;
};

/// Ordered, contiguous transitions of one episode (or a truncated part of
/// one). Returns are cached at construction.
struct Trajectory {
  std::vector<Transition> transitions;
  Vector episode_return;
  Vector discounted_return;

  static Trajectory from_transitions(std::vector<Transition> transitions, double discount);

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
  int num_objectives() const;

  /// Contiguity, single trailing terminal, behavior probabilities and
  /// cached returns (within 1e-10). Throws ConfigError.
  void validate(double discount) const;
};

Vector undiscounted_return(const std::vector<Transition>& transitions);
Vector discounted_return(const std::vector<Transition>& transitions, double discount);

enum class PreferenceMode { epsilon, weights };

/// Either per-objective KL budgets or linear scalarization weights.
struct PreferenceSpec {
  PreferenceMode mode = PreferenceMode::epsilon;
  Vector values;

  static PreferenceSpec epsilons(Vector eps) { return {PreferenceMode::epsilon, std::move(eps)}; }
  static PreferenceSpec weights(Vector w) { return {PreferenceMode::weights, std::move(w)}; }
};

std::string to_string(PreferenceMode mode);
PreferenceMode preference_mode_from_string(const std::string& s);

/// Returns `spec` unchanged if it is a valid preference for `n` objectives.
PreferenceSpec validate_preference(PreferenceSpec spec, int n);

}  // namespace mompo
