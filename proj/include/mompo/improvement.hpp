#pragma once

// Policy improvement: per-objective temperature duals and nonparametric
// weights (E-step), trust-region policy fitting (M-step), the scalarized
// baseline and the on-policy joint-sample E-step.

#include "mompo/nn.hpp"
#include "mompo/policies.hpp"
#include "mompo/types.hpp"

#include <vector>

namespace mompo {

/// L states, M actions per state, one L x M value matrix per objective.
struct ImprovementBatch {
  std::vector<Vector> states;
  std::vector<std::vector<Action>> actions;
  std::vector<Matrix> q;
  /// Log prior mass of each sample. Sampled actions carry log(1/M);
  /// enumerated actions carry log pi_old(a|s).
  Matrix log_prior;

  int num_states() const { return static_cast<int>(states.size()); }
  int num_samples() const { return states.empty() ? 0 : static_cast<int>(actions.front().size()); }
  int num_objectives() const { return static_cast<int>(q.size()); }
  void validate() const;
};

/// M actions per state drawn from `pi_old`; Q left empty for the caller.
ImprovementBatch sample_batch(const Policy& pi_old, const std::vector<Vector>& states, int num_actions_per_state,
                              Rng& rng);
/// Every discrete action once per state, weighted by pi_old.
ImprovementBatch enumerate_batch(const Policy& pi_old, const std::vector<Vector>& states);

// ---------------------------------------------------------------------------
// E-step.

/// g(eta) = eta*eps + eta * mean_i log sum_j prior_ij exp(Q_ij / eta).
/// Without `log_prior` the prior is uniform over the M columns.
double dual_value(double eta, double epsilon, const Matrix& q, const Matrix& log_prior = Matrix());

struct DualDerivatives {
  double value = 0.0;
  double gradient = 0.0;
  double curvature = 0.0;
};

DualDerivatives dual_derivatives(double eta, double epsilon, const Matrix& q, const Matrix& log_prior = Matrix());

struct TemperatureOptions {
  enum class Mode { gradient, converged };

  Mode mode = Mode::gradient;
  int steps = 50;
  double lr = 0.01;
  double lower_bound = 1e-8;
  /// Converged mode stops once |g'(eta)| falls below this.
  double tolerance = 1e-9;
};

struct TemperatureState {
  Vector eta;
  double lower_bound = 1e-8;

  static TemperatureState initial(int n, double eta0 = 1.0, double lower_bound = 1e-8);
};

/// `steps` projected gradient steps, eta <- max(bound, eta - lr g'(eta)).
double solve_temperature(double eta, double epsilon, const Matrix& q, int steps, double lr, double lower_bound,
                         const Matrix& log_prior = Matrix());
/// Minimizer of the dual, found by bisection on g' in log-space until
/// |g'| < tolerance. eps = 0 pushes eta to infinity; callers treat that
/// objective as ignored instead.
double solve_temperature_converged(double epsilon, const Matrix& q, double lower_bound, double tolerance = 1e-9,
                                   const Matrix& log_prior = Matrix());
double solve_temperature(double eta, double epsilon, const Matrix& q, const TemperatureOptions& options,
                         const Matrix& log_prior = Matrix());

/// Row-normalized q_ij proportional to prior_ij exp(Q_ij / eta).
Matrix compute_weights(const Matrix& q, double eta, const Matrix& log_prior = Matrix());
/// mean_i sum_j w_ij log(w_ij / prior_ij): the sample form of KL(q || pi_old).
double sample_kl(const Matrix& weights, const Matrix& log_prior = Matrix());

// ---------------------------------------------------------------------------
// M-step.

struct FitOptions {
  double beta = 1e-3;
  double beta_mean = 1e-3;
  double beta_cov = 1e-5;
  int steps = 1;
  double lr = 3e-4;
  double adam_epsilon = 1e-3;
  double nu_lr = 0.01;
  double nu_init = 1.0;
  /// Backtrack a parameter step that would push the measured KL past its
  /// bound.
  bool kl_safeguard = true;
};

struct FitState {
  /// Unconstrained multipliers, nu = softplus(u).
  double u = 0.0;
  double u_mean = 0.0;
  double u_cov = 0.0;
  nn::Adam theta_adam;
  nn::Adam nu_adam;

  static FitState initial(const FitOptions& options);
  double nu() const { return softplus(u); }
  double nu_mean() const { return softplus(u_mean); }
  double nu_cov() const { return softplus(u_cov); }
};

/// Weighted samples to distil into the policy. `weights[k]` is L x M and is
/// normalized by its total inside the fit, so conditional (rows sum to 1)
/// and joint (all entries sum to 1) weights both work.
struct FitBatch {
  std::vector<Vector> states;
  std::vector<std::vector<Action>> actions;
  std::vector<Matrix> weights;
};

struct FitReport {
  double loss = 0.0;
  double kl = 0.0;       // categorical KL(pi_old || pi) averaged over states
  double kl_mean = 0.0;  // Gaussian decoupled parts
  double kl_cov = 0.0;
  double nu = 0.0;
  double nu_mean = 0.0;
  double nu_cov = 0.0;
  /// Per-step KLs, measured after every parameter update.
  std::vector<double> step_kl;
  std::vector<double> step_kl_mean;
  std::vector<double> step_kl_cov;
};

/// Alternating (theta, nu) Lagrangian updates against the fixed `pi_old`.
/// Tabular policies are fitted exactly, state by state.
FitReport fit_policy(Policy& policy, const Policy& pi_old, const FitBatch& batch, FitState& state,
                     const FitOptions& options);

/// argmax_pi sum_k sum_a q_k(a) log pi(a) s.t. KL(pi_old || pi) <= beta.
Vector exact_fit_single_state(const Vector& pi_old, const std::vector<Vector>& weights, double beta);
/// The objective maximized above.
double fit_objective(const Vector& pi, const std::vector<Vector>& weights);

// ---------------------------------------------------------------------------
// Full steps.

struct ObjectiveDiagnostics {
  double eta = 0.0;
  double dual = 0.0;
  double kl = 0.0;
  bool ignored = false;
};

struct ImprovementDiagnostics {
  std::vector<ObjectiveDiagnostics> objectives;
  FitReport fit;
};

struct ImprovementOptions {
  TemperatureOptions temperature;
  FitOptions fit;
  /// KL budget of the single scalarized objective.
  double scalarized_epsilon = 0.01;
};

/// E-step per objective, then one fit. eps_k = 0 drops objective k.
ImprovementDiagnostics improvement_step(Policy& policy, const Policy& pi_old, const ImprovementBatch& batch,
                                        const Vector& epsilons, TemperatureState& temperatures, FitState& fit_state,
                                        const ImprovementOptions& options);

/// Q = sum_k w_k Q_k with one temperature, then the same pipeline.
ImprovementDiagnostics scalarized_improvement(Policy& policy, const Policy& pi_old, const ImprovementBatch& batch,
                                              const Vector& weights, double epsilon, TemperatureState& temperature,
                                              FitState& fit_state, const ImprovementOptions& options);

/// Dispatches on the preference mode.
ImprovementDiagnostics improve(Policy& policy, const Policy& pi_old, const ImprovementBatch& batch,
                               const PreferenceSpec& preference, TemperatureState& temperatures, FitState& fit_state,
                               const ImprovementOptions& options);

/// Indices of the floor(n/2) largest advantages (at least one), largest
/// first; ties keep the earlier sample.
std::vector<int> top_half(const Vector& advantages);

struct VmpoEStep {
  /// Per objective: one weight per sample, zero outside the retained set,
  /// summing to one.
  std::vector<Vector> weights;
  std::vector<std::vector<int>> retained;
  std::vector<ObjectiveDiagnostics> objectives;
};

/// Joint-sample E-step over one batch. `advantages[k]` has one entry per
/// sample; eps_k = 0 leaves objective k out (empty weights).
VmpoEStep movmpo_estep(const std::vector<Vector>& advantages, const Vector& epsilons, TemperatureState& temperatures,
                       const TemperatureOptions& options);

}  // namespace mompo
