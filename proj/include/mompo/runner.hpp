#pragma once

// Config-driven training loops, preference sweeps and result files.

#include "mompo/envs.hpp"
#include "mompo/improvement.hpp"
#include "mompo/metrics.hpp"
#include "mompo/policies.hpp"
#include "mompo/replay.hpp"
#include "mompo/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mompo {

enum class Algorithm { mo_mpo, scalarized, mo_vmpo };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct Hyperparameters {
  // Networks.
  std::vector<int> policy_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  bool layer_norm = true;
  bool tanh_mean = true;
  double min_variance = 1e-12;
  double init_stddev = 0.5;
  /// auto | tabular | parametric
  std::string policy = "auto";
  /// auto | exact | tabular | network
  std::string critic = "auto";

  // Data.
  int batch_size = 64;
  int actions_per_state = 20;
  /// sample | enumerate (discrete only)
  std::string action_sampling = "sample";
  /// replay: batch_size states drawn from replay. visited: every distinct
  /// state seen so far (tabular policies on grids only).
  std::string state_sampling = "replay";
  std::size_t replay_capacity = 100000;
  int target_period = 200;
  int retrace_length = 8;
  /// Negative means the environment's own discount.
  double discount = -1.0;
  int episodes_per_iteration = 1;
  int learner_steps_per_iteration = 1;
  int warmup_episodes = 1;
  /// On-policy segments; 0 uses whole episodes.
  int segment_length = 0;

  // Optimizers.
  double policy_lr = 3e-4;
  double critic_lr = 3e-4;
  double adam_epsilon = 1e-3;
  int critic_steps = 1;
  double tabular_lr = 0.5;

  // Improvement.
  double eta_init = 1.0;
  double eta_lower_bound = 1e-8;
  /// gradient | converged
  std::string dual = "gradient";
  int dual_steps = 50;
  double dual_lr = 0.01;
  double dual_tolerance = 1e-9;
  double beta = 1e-3;
  double beta_mean = 1e-3;
  double beta_cov = 1e-5;
  int fit_steps = 1;
  double nu_lr = 0.01;
  double nu_init = 1.0;
  bool kl_safeguard = true;
  double scalarized_epsilon = 0.01;

  // Evaluation and logging.
  int eval_interval = 50;
  int eval_episodes = 100;
  bool eval_greedy = false;
  int log_interval = 10;
  /// Stop once the largest policy change of an exact run drops below this
  /// (0 disables).
  double convergence_tolerance = 0.0;

  // Asynchronous actors.
  bool async = false;
  int actors = 2;

  ImprovementOptions improvement_options() const;
  void validate() const;
};

/// paper | desk | custom (custom starts from desk and expects overrides).
Hyperparameters profile(const std::string& name);
/// Unknown keys raise ConfigError.
void apply_overrides(Hyperparameters& h, const nlohmann::json& overrides);
nlohmann::json to_json(const Hyperparameters& h);

/// Per-objective expressions: numbers, [a, b, ...], linspace(a, b, n) and
/// @k for the value already chosen for objective k, combined with + - * /.
/// An entry holds at most one list; entries expand as a Cartesian product
/// with the first entry varying slowest.
struct SweepSpec {
  PreferenceMode mode = PreferenceMode::epsilon;
  std::vector<std::string> values;
};

std::vector<PreferenceSpec> expand_sweep(const SweepSpec& sweep);
/// A single expression with no @ references.
std::vector<double> expand_values(const std::string& expression);

struct ExperimentConfig {
  nlohmann::json env;
  Algorithm algorithm = Algorithm::mo_mpo;
  std::string profile_name = "desk";
  Hyperparameters hyper;
  std::optional<PreferenceSpec> preference;
  std::optional<SweepSpec> sweep;
  std::vector<std::uint64_t> seeds{0};
  int iterations = 1000;
  Vector reference;
  std::string output_dir;
  nlohmann::json raw;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
  /// All preference settings: the sweep expansion or the single preference.
  std::vector<PreferenceSpec> settings() const;
};

struct MetricsRow {
  int iteration = 0;
  Vector mean_return;  // empty when not evaluated at this iteration
  Vector eta;
  Vector kl;
  Vector dual;
  double fit_kl = 0.0;
  double fit_kl_mean = 0.0;
  double fit_kl_cov = 0.0;
  double nu = 0.0;
  double nu_mean = 0.0;
  double nu_cov = 0.0;
};

struct RunRecord {
  std::string id;
  std::string config_hash;
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::mo_mpo;
  PreferenceSpec preference;
  std::vector<MetricsRow> metrics;
  Vector initial_return;
  Vector final_return;
  Vector final_discounted_return;
  int iterations_run = 0;
  double wall_clock_seconds = 0.0;
  bool ok = true;
  std::string error;
  /// Largest KL measured after any single fit step.
  double max_step_kl = 0.0;
  double max_step_kl_mean = 0.0;
  double max_step_kl_cov = 0.0;
  std::optional<Policy> policy;
  nlohmann::json snapshot_metadata;
};

/// `out_dir`, when given, receives a diagnostic dump if a numerical error
/// aborts the run.
RunRecord run_training(const ExperimentConfig& config, const PreferenceSpec& preference, std::uint64_t seed,
                       const std::string& out_dir = "");
/// Uses the config's single preference.
RunRecord run_training(const ExperimentConfig& config, std::uint64_t seed, const std::string& out_dir = "");

/// metrics.csv, run.json and policy.json under `dir`.
void write_run(const RunRecord& record, const std::string& dir);
void write_metrics_csv(const std::string& path, const RunRecord& record);
nlohmann::json run_summary(const RunRecord& record);

struct SweepResult {
  std::vector<RunRecord> runs;
  ParetoSet pareto;
};

/// Every (setting x seed) pair, `parallel` at a time. Failed runs are
/// recorded and skipped in the Pareto set. With a non-empty `out_dir` each
/// run gets its own subdirectory plus pareto.csv and summary.json at the top.
SweepResult run_sweep(const ExperimentConfig& config, int parallel, const std::string& out_dir = "");

/// Reads run.json files below `runs_dir` into a Pareto set.
ParetoSet collect_pareto(const std::string& runs_dir, const Vector& reference);
void write_pareto(const std::string& dir, const ParetoSet& set);

std::string config_hash(const nlohmann::json& j);

/// Rolls out one episode; behavior probabilities come from `policy`.
Trajectory collect_episode(Environment& env, const Policy& policy, double discount, Rng& rng);

}  // namespace mompo
