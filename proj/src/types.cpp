#include "mompo/types.hpp"

#include <cmath>

namespace mompo {

bool BoxSpace::contains(const Vector& a) const {
  if (a.size() != lower.size()) return false;
  return (a.array() >= lower.array()).all() && (a.array() <= upper.array()).all();
}

int EnvSpec::num_actions() const {
  if (!discrete()) throw ConfigError("num_actions: action space is continuous");
  return std::get<DiscreteSpace>(action_space).n;
}

int EnvSpec::action_dim() const {
  if (discrete()) return 1;
  return std::get<BoxSpace>(action_space).dim();
}

void EnvSpec::validate() const {
  if (state_dim < 1) throw ConfigError("EnvSpec: state_dim must be >= 1");
  if (num_objectives < 1) throw ConfigError("EnvSpec: need at least one objective");
  if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("EnvSpec: discount must lie in [0, 1)");
  if (max_episode_steps < 1) throw ConfigError("EnvSpec: max_episode_steps must be >= 1");
  if (discrete()) {
    if (num_actions() < 1) throw ConfigError("EnvSpec: discrete space needs n >= 1");
  } else {
    const auto& box = std::get<BoxSpace>(action_space);
    if (box.dim() < 1 || box.upper.size() != box.lower.size())
      throw ConfigError("EnvSpec: malformed box bounds");
    if ((box.lower.array() > box.upper.array()).any())
      throw ConfigError("EnvSpec: box lower bound exceeds upper bound");
  }
}

void check_reward_vector(const RewardVector& r, int num_objectives) {
  if (r.size() != num_objectives)
    throw ConfigError("reward vector has " + std::to_string(r.size()) + " entries, expected " +
                      std::to_string(num_objectives));
  if (!r.allFinite()) throw ConfigError("reward vector has non-finite entries");
}

int discrete_action(const Action& a) {
  if (const int* i = std::get_if<int>(&a)) return *i;
  throw ConfigError("expected a discrete action");
}

const Vector& continuous_action(const Action& a) {
  if (const Vector* v = std::get_if<Vector>(&a)) return *v;
  throw ConfigError("expected a continuous action");
}

bool same_action(const Action& a, const Action& b) {
  if (a.index() != b.index()) return false;
  if (a.index() == 0) return std::get<int>(a) == std::get<int>(b);
  const auto& va = std::get<Vector>(a);
  const auto& vb = std::get<Vector>(b);
  return va.size() == vb.size() && va == vb;
}

Vector undiscounted_return(const std::vector<Transition>& transitions) {
  if (transitions.empty()) return {};
  Vector total = Vector::Zero(transitions.front().rewards.size());
  for (const auto& t : transitions) total += t.rewards;
  return total;
}

Vector discounted_return(const std::vector<Transition>& transitions, double discount) {
  if (transitions.empty()) return {};
  Vector total = Vector::Zero(transitions.front().rewards.size());
  double scale = 1.0;
  for (const auto& t : transitions) {
    total += scale * t.rewards;
    scale *= discount;
  }
  return total;
}

Trajectory Trajectory::from_transitions(std::vector<Transition> transitions, double discount) {
  Trajectory traj;
  traj.episode_return = undiscounted_return(transitions);
  traj.discounted_return = mompo::discounted_return(transitions, discount);
  traj.transitions = std::move(transitions);
  return traj;
}

int Trajectory::num_objectives() const {
  return transitions.empty() ? 0 : static_cast<int>(transitions.front().rewards.size());
}

void Trajectory::validate(double discount) const {
  if (transitions.empty()) throw ConfigError("trajectory is empty");
  const int n = num_objectives();
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    const auto& t = transitions[i];
    check_reward_vector(t.rewards, n);
    if (!(t.behavior_prob > 0.0) || !std::isfinite(t.behavior_prob))
      throw ConfigError("transition " + std::to_string(i) + " has non-positive behavior_prob");
    if (std::holds_alternative<int>(t.action) && t.behavior_prob > 1.0 + 1e-12)
      throw ConfigError("discrete transition " + std::to_string(i) + " has behavior_prob > 1");
    if (t.terminal && i + 1 != transitions.size())
      throw ConfigError("terminal transition before the end of the trajectory");
    if (i + 1 < transitions.size()) {
      const auto& next = transitions[i + 1];
      if (t.next_state.size() != next.state.size() || t.next_state != next.state)
        throw ConfigError("trajectory is not contiguous at step " + std::to_string(i));
    }
  }
  const Vector ret = undiscounted_return(transitions);
  const Vector disc = mompo::discounted_return(transitions, discount);
  if (episode_return.size() != n || discounted_return.size() != n ||
      (ret - episode_return).cwiseAbs().maxCoeff() > 1e-10 ||
      (disc - discounted_return).cwiseAbs().maxCoeff() > 1e-10)
    throw ConfigError("cached trajectory returns disagree with transitions");
}

std::string to_string(PreferenceMode mode) {
  return mode == PreferenceMode::epsilon ? "epsilon" : "weights";
}

PreferenceMode preference_mode_from_string(const std::string& s) {
  if (s == "epsilon" || s == "epsilons") return PreferenceMode::epsilon;
  if (s == "weights") return PreferenceMode::weights;
  throw ConfigError("unknown preference mode '" + s + "'");
}

PreferenceSpec validate_preference(PreferenceSpec spec, int n) {
  if (spec.values.size() != n)
    throw ConfigError("preference has " + std::to_string(spec.values.size()) + " entries for " +
                      std::to_string(n) + " objectives");
  if (!spec.values.allFinite()) throw ConfigError("preference has non-finite entries");
  if ((spec.values.array() < 0.0).any()) throw ConfigError("preference entries must be nonnegative");
  if (spec.mode == PreferenceMode::weights && std::abs(spec.values.sum() - 1.0) > 1e-9)
    throw ConfigError("scalarization weights must sum to 1");
  return spec;
}

}  // namespace mompo
