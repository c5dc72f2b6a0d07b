#pragma once

#include "mompo/policies.hpp"
#include "mompo/types.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mompo {

struct StepResult {
  Vector next_state;
  RewardVector rewards;
  bool terminal = false;
  /// Episode ended by the step limit; the next state is still bootstrapped.
  bool truncated = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual EnvSpec spec() const = 0;
  /// Natural feature encoding for policies and critics on this task.
  virtual Encoding encoding() const = 0;
  virtual Vector reset(Rng& rng) = 0;
  virtual StepResult step(const Action& action) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
  virtual nlohmann::json to_json() const = 0;

  /// True when objective k's reward is a known function of the action
  /// alone, so it can be evaluated directly instead of through a critic.
  virtual bool action_only_reward(int /*k*/) const { return false; }
  virtual double action_reward(int k, const Action& action) const;
};

/// Single-state, three-armed bandit with two objectives. Actions are
/// 0 = up, 1 = right, 2 = left; objective 0 is multiplied by `scale`.
class SimpleWorld final : public Environment {
 public:
  static constexpr int kUp = 0;
  static constexpr int kRight = 1;
  static constexpr int kLeft = 2;

  /// Rows: up (3, 3), right (4, 1), left (1, 4).
  static Matrix default_rewards();

  explicit SimpleWorld(double scale = 1.0, Matrix rewards = default_rewards());

  std::string name() const override { return "simple_world"; }
  EnvSpec spec() const override;
  Encoding encoding() const override { return Encoding::grid(1, 1); }
  Vector reset(Rng& rng) override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<SimpleWorld>(*this); }
  nlohmann::json to_json() const override;

  double scale() const { return scale_; }
  /// Scaled reward row of `action`.
  RewardVector reward(int action) const;
  /// actions x objectives, already scaled.
  Matrix scaled_rewards() const;

 private:
  double scale_;
  Matrix rewards_;
};

struct Treasure {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

/// Grid world with a time objective (index 0, -1 per step) and a treasure
/// objective (index 1). Actions are 0 = up, 1 = right, 2 = down, 3 = left.
class DeepSeaTreasure final : public Environment {
 public:
  struct Layout {
    /// One string per row: '.' water, '#' sea floor, 'T' treasure.
    std::vector<std::string> grid;
    std::vector<Treasure> treasures;
    int start_row = 0;
    int start_col = 0;
    int max_steps = 200;
  };

  static Layout canonical_layout();

  explicit DeepSeaTreasure(Layout layout = canonical_layout(), bool require_monotone_values = true);

  std::string name() const override { return "deep_sea_treasure"; }
  EnvSpec spec() const override;
  Encoding encoding() const override { return Encoding::grid(rows(), cols()); }
  Vector reset(Rng& rng) override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<DeepSeaTreasure>(*this); }
  nlohmann::json to_json() const override;

  int rows() const { return static_cast<int>(layout_.grid.size()); }
  int cols() const { return static_cast<int>(layout_.grid.front().size()); }
  const Layout& layout() const { return layout_; }
  bool blocked(int row, int col) const;
  /// Index into layout().treasures, or -1.
  int treasure_at(int row, int col) const;
  /// Shortest path length from the start to every treasure; -1 if unreachable.
  std::vector<int> treasure_distances() const;
  Vector position() const { return Vector{{static_cast<double>(row_), static_cast<double>(col_)}}; }

 private:
  Layout layout_;
  int row_ = 0;
  int col_ = 0;
  int steps_ = 0;
};

/// One-dimensional velocity control: v' = damping * v + gain * clip(a).
/// Objective 0 is min(v' / target_speed, 1); objective 1 is -|clip(a)|.
class PointMassRun final : public Environment {
 public:
  struct Params {
    double target_speed = 5.0;
    int horizon = 100;
    double damping = 0.95;
    double gain = 0.5;
    double initial_velocity = 0.0;
  };

  PointMassRun() : PointMassRun(Params{}) {}
  explicit PointMassRun(Params params);

  std::string name() const override { return "point_mass_run"; }
  EnvSpec spec() const override;
  Encoding encoding() const override { return Encoding::identity(1); }
  Vector reset(Rng& rng) override;
  StepResult step(const Action& action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMassRun>(*this); }
  nlohmann::json to_json() const override;

  const Params& params() const { return params_; }
  double velocity() const { return velocity_; }
  /// Action-norm penalty, a function of the action alone.
  static double action_penalty(const Vector& action);
  bool action_only_reward(int k) const override { return k == 1; }
  double action_reward(int k, const Action& action) const override;

 private:
  Params params_;
  double velocity_ = 0.0;
  int steps_ = 0;
};

std::unique_ptr<Environment> make_environment(const nlohmann::json& config);

struct FrontPoint {
  double treasure = 0.0;
  double time_return = 0.0;

  /// In objective order: [time, treasure].
  Vector objectives() const { return Vector{{time_return, treasure}}; }
};

/// True Pareto front of a Deep Sea Treasure layout, sorted by treasure value.
std::vector<FrontPoint> true_pareto_front(const DeepSeaTreasure& env);

struct EvaluationResult {
  Vector mean_return;
  Vector mean_discounted_return;
  double mean_length = 0.0;
};

using ActionFn = std::function<Action(const Vector& state, Rng& rng)>;

EvaluationResult evaluate_policy(const Environment& env, const ActionFn& act, int episodes,
                                 double discount, Rng& rng);
/// `greedy` uses the policy's mode instead of sampling.
EvaluationResult evaluate_policy(const Environment& env, const Policy& policy, int episodes,
                                 double discount, Rng& rng, bool greedy = false);

}  // namespace mompo
