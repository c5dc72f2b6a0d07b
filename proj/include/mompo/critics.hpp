#pragma once

// Per-objective policy evaluation: exact bandit values, tabular TD(0),
// Retrace targets for Q-networks and n-step targets for V-networks.

#include "mompo/envs.hpp"
#include "mompo/nn.hpp"
#include "mompo/policies.hpp"
#include "mompo/types.hpp"

#include <functional>
#include <vector>

namespace mompo {

/// Q_k(a) = r_k(a) for a single-state bandit. Rows are objectives.
Matrix exact_bandit_q(const Environment& env);

/// In-place TD(0) on one table entry; `value_of_next` is ignored when
/// `terminal`. Returns the TD error before the update.
double td0_update(Matrix& q, int state, int action, double reward, double value_of_next, bool terminal,
                  double discount, double lr);

/// One Q table per objective with target copies.
class TabularCriticBank {
 public:
  TabularCriticBank() = default;
  TabularCriticBank(int num_objectives, int num_states, int num_actions, double init = 0.0);

  int num_objectives() const { return static_cast<int>(online_.size()); }
  const Matrix& online(int k) const { return online_[k]; }
  Matrix& online(int k) { return online_[k]; }
  const Matrix& target(int k) const { return target_[k]; }

  /// Updates every objective on one transition. V(s') = E_{pi}[Q_k(s', .)]
  /// under `next_probs`, using the online tables.
  void td0(const Encoding& encoding, const Transition& t, const Vector& next_probs, double discount, double lr);
  void sync_targets() { target_ = online_; }

 private:
  std::vector<Matrix> online_;
  std::vector<Matrix> target_;
};

/// c = min(1, pi / b). Throws ConfigError when b <= 0.
double retrace_trace_coefficient(double pi, double b);

struct RetraceConfig {
  int sequence_length = 8;
  double discount = 0.99;

  void validate() const;
};

/// Array form over one window of T steps. `q[t]` is the target critic at
/// (s_t, a_t), `v_next[t]` = E_pi Q'(s_{t+1}, .), `c[t]` the trace
/// coefficient of step t (c[0] is unused). A terminal step never
/// bootstraps. Windows end either at a terminal or are bootstrapped.
Vector retrace_targets(const Vector& rewards, const Vector& q, const Vector& v_next, const Vector& c,
                       const std::vector<bool>& terminal, double discount);

struct RetraceModel {
  std::function<double(const Vector& state, const Action& action)> q;  // target critic
  std::function<double(const Vector& state)> v;                       // E_{pi_old} of the target critic
  std::function<double(const Vector& state, const Action& action)> pi;  // pi_old(a|s), mass or density
};

Vector retrace_targets(const std::vector<Transition>& window, int objective, const RetraceModel& model,
                       double discount);

/// Q-networks over [features(s), one-hot(a) or a].
class QNetworkBank {
 public:
  struct Options {
    std::vector<int> hidden{64, 64};
    bool layer_norm = false;
    double lr = 3e-4;
    double adam_epsilon = 1e-3;
  };

  QNetworkBank() = default;
  /// `num_actions` > 0 selects one-hot discrete inputs; otherwise
  /// `action_dim` continuous inputs are appended.
  QNetworkBank(int num_objectives, Encoding encoding, int num_actions, int action_dim, const Options& options,
               Rng& rng);

  int num_objectives() const { return static_cast<int>(online_.size()); }
  bool discrete() const { return num_actions_ > 0; }
  int num_actions() const { return num_actions_; }
  const Encoding& encoding() const { return encoding_; }

  Vector input(const Vector& state, const Action& action) const;
  double q(int k, const Vector& state, const Action& action, bool use_target) const;
  /// Q_k(s, a) for every discrete action.
  Vector q_all(int k, const Vector& state, bool use_target) const;

  /// One Adam step on the mean squared error; returns the pre-step loss.
  double fit_q(int k, const std::vector<Vector>& states, const std::vector<Action>& actions, const Vector& targets);
  void sync_targets() { target_ = online_; }

  const nn::Net& online(int k) const { return online_[k]; }
  nn::Net& online(int k) { return online_[k]; }
  const nn::Net& target(int k) const { return target_[k]; }
  nn::Adam& optimizer(int k) { return adam_[k]; }

 private:
  Encoding encoding_;
  int num_actions_ = 0;
  int action_dim_ = 0;
  std::vector<nn::Net> online_;
  std::vector<nn::Net> target_;
  std::vector<nn::Adam> adam_;
};

/// State-value networks for the on-policy variant.
class VNetworkBank {
 public:
  using Options = QNetworkBank::Options;

  VNetworkBank() = default;
  VNetworkBank(int num_objectives, Encoding encoding, const Options& options, Rng& rng);

  int num_objectives() const { return static_cast<int>(online_.size()); }
  double v(int k, const Vector& state, bool use_target = false) const;
  double fit_v(int k, const std::vector<Vector>& states, const Vector& targets);
  void sync_targets() { target_ = online_; }

  const nn::Net& online(int k) const { return online_[k]; }
  const nn::Net& target(int k) const { return target_[k]; }

 private:
  Encoding encoding_;
  std::vector<nn::Net> online_;
  std::vector<nn::Net> target_;
  std::vector<nn::Adam> adam_;
};

struct NStepTargets {
  Vector targets;
  Vector advantages;
};

/// G_t = sum_{l=t}^{T-1} gamma^{l-t} r_l + gamma^{T-t} V(s_T), with V(s_T) = 0
/// when the segment ends in a terminal; A_t = G_t - V(s_t).
NStepTargets nstep_v_targets(const std::vector<Transition>& segment, int objective,
                             const std::function<double(const Vector&)>& value, double discount);

}  // namespace mompo
