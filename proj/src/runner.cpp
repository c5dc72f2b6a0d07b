#include "mompo/runner.hpp"

#include "mompo/critics.hpp"
#include "mompo/serialize.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace mompo {

namespace fs = std::filesystem;

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::mo_mpo: return "mo_mpo";
    case Algorithm::scalarized: return "scalarized";
    case Algorithm::mo_vmpo: return "mo_vmpo";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "mo_mpo") return Algorithm::mo_mpo;
  if (s == "scalarized") return Algorithm::scalarized;
  if (s == "mo_vmpo") return Algorithm::mo_vmpo;
  throw ConfigError("unknown algorithm '" + s + "' (expected mo_mpo, scalarized or mo_vmpo)");
}

// ---------------------------------------------------------------------------
// Hyperparameters.

ImprovementOptions Hyperparameters::improvement_options() const {
  ImprovementOptions o;
  o.temperature.mode =
      dual == "converged" ? TemperatureOptions::Mode::converged : TemperatureOptions::Mode::gradient;
  o.temperature.steps = dual_steps;
  o.temperature.lr = dual_lr;
  o.temperature.lower_bound = eta_lower_bound;
  o.temperature.tolerance = dual_tolerance;
  o.fit.beta = beta;
  o.fit.beta_mean = beta_mean;
  o.fit.beta_cov = beta_cov;
  o.fit.steps = fit_steps;
  o.fit.lr = policy_lr;
  o.fit.adam_epsilon = adam_epsilon;
  o.fit.nu_lr = nu_lr;
  o.fit.nu_init = nu_init;
  o.fit.kl_safeguard = kl_safeguard;
  o.scalarized_epsilon = scalarized_epsilon;
  return o;
}

void Hyperparameters::validate() const {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("hyperparameter " + what);
  };
  require(policy == "auto" || policy == "tabular" || policy == "parametric", "policy must be auto|tabular|parametric");
  require(critic == "auto" || critic == "exact" || critic == "tabular" || critic == "network",
          "critic must be auto|exact|tabular|network");
  require(action_sampling == "sample" || action_sampling == "enumerate", "action_sampling must be sample|enumerate");
  require(state_sampling == "replay" || state_sampling == "visited", "state_sampling must be replay|visited");
  require(dual == "gradient" || dual == "converged", "dual must be gradient|converged");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(actions_per_state >= 1, "actions_per_state must be >= 1");
  require(replay_capacity >= 1, "replay_capacity must be >= 1");
  require(target_period >= 1, "target_period must be >= 1");
  require(retrace_length >= 1, "retrace_length must be >= 1");
  require(discount < 1.0, "discount must be < 1");
  require(episodes_per_iteration >= 0, "episodes_per_iteration must be >= 0");
  require(learner_steps_per_iteration >= 1, "learner_steps_per_iteration must be >= 1");
  require(warmup_episodes >= 0, "warmup_episodes must be >= 0");
  require(segment_length >= 0, "segment_length must be >= 0");
  require(policy_lr > 0 && critic_lr > 0 && adam_epsilon > 0, "learning rates and adam_epsilon must be positive");
  require(tabular_lr > 0 && tabular_lr <= 1, "tabular_lr must lie in (0, 1]");
  require(eta_init > 0 && eta_lower_bound > 0, "temperatures must be positive");
  require(beta >= 0 && beta_mean >= 0 && beta_cov >= 0, "trust regions must be nonnegative");
  require(fit_steps >= 0 && critic_steps >= 0 && dual_steps >= 0, "step counts must be nonnegative");
  require(nu_init > 0, "nu_init must be positive");
  require(scalarized_epsilon >= 0, "scalarized_epsilon must be nonnegative");
  require(eval_interval >= 1 && eval_episodes >= 1 && log_interval >= 1, "evaluation settings must be positive");
  require(min_variance > 0 && init_stddev > std::sqrt(min_variance), "init_stddev must exceed sqrt(min_variance)");
  require(actors >= 1, "actors must be >= 1");
}

Hyperparameters profile(const std::string& name) {
  Hyperparameters h;
  if (name == "desk" || name == "custom") return h;
  if (name == "paper") {
    h.policy_hidden = {300, 200};
    h.critic_hidden = {400, 400, 300};
    h.batch_size = 512;
    h.replay_capacity = 1000000;
    return h;
  }
  throw ConfigError("unknown profile '" + name + "' (expected paper, desk or custom)");
}

namespace {

template <typename T>
void set_if(const nlohmann::json& j, const char* key, T& field, std::vector<std::string>& seen) {
  if (!j.contains(key)) return;
  seen.emplace_back(key);
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("hyperparameter ") + key + ": " + e.what());
  }
}

}  // namespace

#define MOMPO_HYPER_FIELDS(X)                                                                                    \
  X(policy_hidden) X(critic_hidden) X(layer_norm) X(tanh_mean) X(min_variance) X(init_stddev) X(policy)          \
  X(critic) X(batch_size) X(actions_per_state) X(action_sampling) X(state_sampling) X(replay_capacity) X(target_period)             \
  X(retrace_length) X(discount) X(episodes_per_iteration) X(learner_steps_per_iteration) X(warmup_episodes)       \
  X(segment_length) X(policy_lr) X(critic_lr) X(adam_epsilon) X(critic_steps) X(tabular_lr) X(eta_init)           \
  X(eta_lower_bound) X(dual) X(dual_steps) X(dual_lr) X(dual_tolerance) X(beta) X(beta_mean) X(beta_cov)          \
  X(fit_steps) X(nu_lr) X(nu_init) X(kl_safeguard) X(scalarized_epsilon) X(eval_interval) X(eval_episodes)        \
  X(eval_greedy) X(log_interval) X(convergence_tolerance) X(async) X(actors)

void apply_overrides(Hyperparameters& h, const nlohmann::json& overrides) {
  if (overrides.is_null()) return;
  if (!overrides.is_object()) throw ConfigError("hyperparameters must be a JSON object");
  std::vector<std::string> seen;
#define X(name) set_if(overrides, #name, h.name, seen);
  MOMPO_HYPER_FIELDS(X)
#undef X
  for (const auto& [key, value] : overrides.items())
    if (std::find(seen.begin(), seen.end(), key) == seen.end())
      throw ConfigError("unknown hyperparameter '" + key + "'");
}

nlohmann::json to_json(const Hyperparameters& h) {
  nlohmann::json j;
#define X(name) j[#name] = h.name;
  MOMPO_HYPER_FIELDS(X)
#undef X
  return j;
}

// ---------------------------------------------------------------------------
// Experiment config.

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::vector<std::string> known{"env",    "algorithm", "profile",    "hyperparameters", "preference",
                                              "sweep",  "seeds",     "iterations", "reference",       "output_dir",
                                              "name",   "comment"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key '" + key + "'");
  ExperimentConfig c;
  c.raw = j;
  try {
    c.env = j.at("env");
    c.algorithm = algorithm_from_string(j.value("algorithm", std::string("mo_mpo")));
    c.profile_name = j.value("profile", std::string("desk"));
    c.hyper = profile(c.profile_name);
    if (j.contains("hyperparameters")) apply_overrides(c.hyper, j["hyperparameters"]);
    else if (c.profile_name == "custom") throw ConfigError("profile 'custom' needs a hyperparameters block");
    c.hyper.validate();
    if (j.contains("preference")) c.preference = preference_from_json(j["preference"]);
    if (j.contains("sweep")) {
      SweepSpec s;
      s.mode = preference_mode_from_string(j["sweep"].at("mode").get<std::string>());
      s.values = j["sweep"].at("values").get<std::vector<std::string>>();
      c.sweep = s;
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
    c.iterations = j.value("iterations", c.iterations);
    if (c.iterations < 0) throw ConfigError("iterations must be >= 0");
    if (j.contains("reference")) c.reference = vector_from_json(j["reference"]);
    c.output_dir = j.value("output_dir", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  const auto env = make_environment(c.env);
  const int n = env->spec().num_objectives;
  if (c.reference.size() != 0 && c.reference.size() != n)
    throw ConfigError("reference point needs one entry per objective");
  for (const auto& p : c.settings()) validate_preference(p, n);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) { return from_json(read_json_file(path)); }

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["env"] = env;
  j["algorithm"] = mompo::to_string(algorithm);
  j["profile"] = profile_name;
  j["hyperparameters"] = mompo::to_json(hyper);
  if (preference) j["preference"] = mompo::to_json(*preference);
  if (sweep) j["sweep"] = {{"mode", mompo::to_string(sweep->mode)}, {"values", sweep->values}};
  j["seeds"] = seeds;
  j["iterations"] = iterations;
  if (reference.size() > 0) j["reference"] = mompo::to_json(reference);
  return j;
}

std::vector<PreferenceSpec> ExperimentConfig::settings() const {
  if (sweep) {
    auto s = expand_sweep(*sweep);
    if (s.empty()) throw ConfigError("sweep expands to no settings");
    return s;
  }
  if (preference) return {*preference};
  throw ConfigError("config needs a preference or a sweep");
}

std::string config_hash(const nlohmann::json& j) {
  // FNV-1a over the canonical dump; stable across platforms and builds.
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Rollouts.

Trajectory collect_episode(Environment& env, const Policy& policy, double discount, Rng& rng) {
  std::vector<Transition> steps;
  Vector state = env.reset(rng);
  const int limit = env.spec().max_episode_steps;
  for (int t = 0; t < limit; ++t) {
    Transition tr;
    tr.state = state;
    tr.action = sample(policy, state, rng);
    tr.behavior_prob = std::max(prob(policy, state, tr.action), 1e-300);
    const StepResult r = env.step(tr.action);
    tr.rewards = r.rewards;
    tr.next_state = r.next_state;
    tr.terminal = r.terminal;
    steps.push_back(std::move(tr));
    if (r.terminal || r.truncated) break;
    state = r.next_state;
  }
  return Trajectory::from_transitions(std::move(steps), discount);
}

namespace {

/// Publishes immutable policy snapshots to actor threads.
class PolicyChannel {
 public:
  void publish(const Policy& p) {
    auto snap = std::make_shared<const Policy>(p);
    std::lock_guard lock(mutex_);
    current_ = std::move(snap);
  }
  std::shared_ptr<const Policy> get() const {
    std::lock_guard lock(mutex_);
    return current_;
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const Policy> current_;
};

struct Evaluator {
  const Environment& env;
  double discount;
  int episodes;
  bool greedy;
  std::uint64_t seed;

  EvaluationResult operator()(const Policy& policy, std::uint64_t salt) const {
    Rng rng(seed * 1000003ULL + salt);
    return evaluate_policy(env, policy, episodes, discount, rng, greedy);
  }
};

constexpr std::uint64_t kFinalSalt = 0xF1A1ULL;

MetricsRow make_row(int iteration, const ImprovementDiagnostics& d) {
  MetricsRow row;
  row.iteration = iteration;
  const auto n = static_cast<Eigen::Index>(d.objectives.size());
  row.eta.resize(n);
  row.kl.resize(n);
  row.dual.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& o = d.objectives[static_cast<std::size_t>(k)];
    row.eta(k) = o.eta;
    row.kl(k) = o.kl;
    row.dual(k) = o.dual;
  }
  row.fit_kl = d.fit.kl;
  row.fit_kl_mean = d.fit.kl_mean;
  row.fit_kl_cov = d.fit.kl_cov;
  row.nu = d.fit.nu;
  row.nu_mean = d.fit.nu_mean;
  row.nu_cov = d.fit.nu_cov;
  return row;
}

void track_step_kl(RunRecord& rec, const FitReport& f) {
  for (const double v : f.step_kl) rec.max_step_kl = std::max(rec.max_step_kl, v);
  for (const double v : f.step_kl_mean) rec.max_step_kl_mean = std::max(rec.max_step_kl_mean, v);
  for (const double v : f.step_kl_cov) rec.max_step_kl_cov = std::max(rec.max_step_kl_cov, v);
}

Policy make_policy(const Environment& env, const Hyperparameters& h, bool tabular, Rng& rng) {
  const EnvSpec spec = env.spec();
  const Encoding enc = env.encoding();
  if (spec.discrete()) {
    if (tabular) return TabularCategoricalPolicy::uniform(enc.num_states(), spec.num_actions(), enc);
    return make_categorical_policy(enc, spec.num_actions(), h.policy_hidden, h.layer_norm, rng);
  }
  auto g = make_gaussian_policy(enc, spec.action_dim(), h.policy_hidden, h.layer_norm, h.init_stddev,
                                h.min_variance, rng);
  g.tanh_mean = h.tanh_mean;
  return g;
}

/// Shared state of one training run.
struct Run {
  const ExperimentConfig& config;
  PreferenceSpec preference;
  std::uint64_t seed;
  const Hyperparameters& h;
  std::unique_ptr<Environment> env;
  EnvSpec spec;
  double discount;
  int num_objectives;
  Rng rng;
  ImprovementOptions options;
  TemperatureState temperatures;
  FitState fit_state;
  RunRecord record;
  Evaluator evaluator;

  Run(const ExperimentConfig& c, const PreferenceSpec& p, std::uint64_t s)
      : config(c),
        preference(p),
        seed(s),
        h(c.hyper),
        env(make_environment(c.env)),
        spec(env->spec()),
        discount(h.discount >= 0.0 ? h.discount : spec.discount),
        num_objectives(spec.num_objectives),
        rng(s),
        options(h.improvement_options()),
        evaluator{*env, discount, h.eval_episodes, h.eval_greedy, s} {
    validate_preference(preference, num_objectives);
    const int effective = preference.mode == PreferenceMode::weights ? 1 : num_objectives;
    temperatures = TemperatureState::initial(effective, h.eta_init, h.eta_lower_bound);
    fit_state = FitState::initial(options.fit);
  }

  bool log_now(int it) const { return it % h.log_interval == 0 || it == config.iterations; }
  bool eval_now(int it) const { return it % h.eval_interval == 0 || it == config.iterations; }

  void log(int it, const ImprovementDiagnostics& d, const Policy& policy) {
    track_step_kl(record, d.fit);
    if (!log_now(it) && !eval_now(it)) return;
    MetricsRow row = make_row(it, d);
    if (eval_now(it)) row.mean_return = evaluator(policy, static_cast<std::uint64_t>(it)).mean_return;
    record.metrics.push_back(std::move(row));
  }

  void start(const Policy& policy) {
    MetricsRow row;
    row.iteration = 0;
    row.mean_return = evaluator(policy, 0).mean_return;
    record.initial_return = row.mean_return;
    record.metrics.push_back(std::move(row));
  }

  void finish(const Policy& policy, int iterations_run) {
    const EvaluationResult final_eval = evaluator(policy, kFinalSalt);
    record.final_return = final_eval.mean_return;
    record.final_discounted_return = final_eval.mean_discounted_return;
    record.iterations_run = iterations_run;
    record.policy = policy;
    record.snapshot_metadata = {{"env", config.env},
                                {"discount", discount},
                                {"algorithm", to_string(config.algorithm)},
                                {"preference", to_json(preference)},
                                {"seed", seed},
                                {"eval_greedy", h.eval_greedy},
                                {"eval_seed", seed * 1000003ULL + kFinalSalt},
                                {"iterations", iterations_run}};
  }
};

// Single-state bandit with exact Q values: enumerated (or sampled) actions,
// exact trust-region fit.
void train_exact_bandit(Run& run) {
  const auto& h = run.h;
  Policy policy = make_policy(*run.env, h, h.policy != "parametric", run.rng);
  const Matrix q_table = exact_bandit_q(*run.env);
  const Vector state = run.env->reset(run.rng);
  run.start(policy);
  Policy pi_old = policy;
  int it = 0;
  for (it = 1; it <= run.config.iterations; ++it) {
    if ((it - 1) % h.target_period == 0) pi_old = policy;
    ImprovementBatch batch = h.action_sampling == "enumerate"
                                 ? enumerate_batch(pi_old, {state})
                                 : sample_batch(pi_old, {state}, h.actions_per_state, run.rng);
    for (int k = 0; k < run.num_objectives; ++k) {
      Matrix qk(1, batch.num_samples());
      for (int j = 0; j < batch.num_samples(); ++j) qk(0, j) = q_table(k, discrete_action(batch.actions[0][static_cast<std::size_t>(j)]));
      batch.q.push_back(std::move(qk));
    }
    const Vector before = categorical_distribution(policy, state);
    const auto diag = improve(policy, pi_old, batch, run.preference, run.temperatures, run.fit_state, run.options);
    run.log(it, diag, policy);
    const double change = (categorical_distribution(policy, state) - before).cwiseAbs().maxCoeff();
    if (h.convergence_tolerance > 0.0 && change < h.convergence_tolerance && h.target_period == 1) {
      if (run.record.metrics.back().iteration != it) {
        MetricsRow row = make_row(it, diag);
        row.mean_return = run.evaluator(policy, static_cast<std::uint64_t>(it)).mean_return;
        run.record.metrics.push_back(std::move(row));
      }
      break;
    }
  }
  run.finish(policy, std::min(it, run.config.iterations));
}

/// Distinct grid states in order of first visit.
class VisitedStates {
 public:
  explicit VisitedStates(Encoding enc) : enc_(enc), seen_(static_cast<std::size_t>(enc.num_states()), 0) {}
  void add(const Trajectory& t) {
    std::lock_guard lock(mutex_);
    for (const auto& tr : t.transitions) {
      const auto i = static_cast<std::size_t>(enc_.index(tr.state));
      if (!seen_[i]) {
        seen_[i] = 1;
        states_.push_back(tr.state);
      }
    }
  }
  std::vector<Vector> states() const {
    std::lock_guard lock(mutex_);
    return states_;
  }

 private:
  Encoding enc_;
  mutable std::mutex mutex_;
  std::vector<char> seen_;
  std::vector<Vector> states_;
};

/// Per-objective critics for the off-policy loop.
struct OffPolicyCritics {
  bool tabular = false;
  TabularCriticBank table;
  QNetworkBank nets;
  std::vector<bool> action_only;
};

double critic_q(const OffPolicyCritics& c, const Environment& env, const Encoding& enc, int k, const Vector& s,
                const Action& a) {
  if (c.action_only[static_cast<std::size_t>(k)]) return env.action_reward(k, a);
  if (c.tabular) return c.table.target(k)(enc.index(s), discrete_action(a));
  return c.nets.q(k, s, a, true);
}

void update_critics(Run& run, OffPolicyCritics& c, const ReplayBuffer& replay, const Policy& pi_old) {
  const auto& h = run.h;
  const Encoding enc = run.env->encoding();
  for (int step = 0; step < h.critic_steps; ++step) {
    if (c.tabular) {
      for (const auto& t : replay.sample_transitions(static_cast<std::size_t>(h.batch_size), run.rng)) {
        const Vector next_probs = categorical_distribution(pi_old, t.terminal ? t.state : t.next_state);
        c.table.td0(enc, t, next_probs, run.discount, h.tabular_lr);
      }
      continue;
    }
    const auto windows = replay.sample_sequences(static_cast<std::size_t>(h.batch_size),
                                                 static_cast<std::size_t>(h.retrace_length), run.rng);
    for (int k = 0; k < run.num_objectives; ++k) {
      if (c.action_only[static_cast<std::size_t>(k)]) continue;
      RetraceModel model;
      model.q = [&](const Vector& s, const Action& a) { return c.nets.q(k, s, a, true); };
      model.v = [&](const Vector& s) {
        if (c.nets.discrete()) return c.nets.q_all(k, s, true).dot(categorical_distribution(pi_old, s));
        double v = 0.0;
        for (int j = 0; j < h.actions_per_state; ++j) v += c.nets.q(k, s, sample(pi_old, s, run.rng), true);
        return v / h.actions_per_state;
      };
      model.pi = [&](const Vector& s, const Action& a) { return prob(pi_old, s, a); };
      std::vector<Vector> states;
      std::vector<Action> actions;
      std::vector<double> targets;
      for (const auto& w : windows) {
        const Vector t = retrace_targets(w, k, model, run.discount);
        for (std::size_t i = 0; i < w.size(); ++i) {
          states.push_back(w[i].state);
          actions.push_back(w[i].action);
          targets.push_back(t(static_cast<Eigen::Index>(i)));
        }
      }
      c.nets.fit_q(k, states, actions, Eigen::Map<const Vector>(targets.data(), static_cast<Eigen::Index>(targets.size())));
    }
  }
}

void train_off_policy(Run& run) {
  const auto& h = run.h;
  const Encoding enc = run.env->encoding();
  const bool grid = enc.kind == Encoding::Kind::one_hot_grid;
  if (h.policy == "tabular" && !(run.spec.discrete() && grid))
    throw ConfigError("tabular policies need a discrete grid environment");
  const bool all_visited = h.state_sampling == "visited";
  if (all_visited && !grid) throw ConfigError("state_sampling 'visited' needs a grid environment");
  Policy policy = make_policy(*run.env, h, h.policy == "tabular", run.rng);

  OffPolicyCritics critics;
  for (int k = 0; k < run.num_objectives; ++k) critics.action_only.push_back(run.env->action_only_reward(k));
  const bool want_table = h.critic == "tabular" || (h.critic == "auto" && run.spec.discrete() && grid);
  if (want_table) {
    if (!(run.spec.discrete() && grid)) throw ConfigError("tabular critics need a discrete grid environment");
    critics.tabular = true;
    critics.table = TabularCriticBank(run.num_objectives, enc.num_states(), run.spec.num_actions());
  } else if (h.critic == "exact") {
    throw ConfigError("exact critics are only available for single-state bandits");
  } else {
    QNetworkBank::Options o{h.critic_hidden, h.layer_norm, h.critic_lr, h.adam_epsilon};
    critics.nets = QNetworkBank(run.num_objectives, enc, run.spec.discrete() ? run.spec.num_actions() : 0,
                                run.spec.action_dim(), o, run.rng);
  }

  ReplayBuffer replay(h.replay_capacity);
  std::optional<VisitedStates> visited;
  if (all_visited) visited.emplace(enc);
  const auto store = [&](Trajectory t) {
    if (visited) visited->add(t);
    replay.append(std::move(t));
  };
  Policy pi_old = policy;
  run.start(policy);

  PolicyChannel channel;
  std::atomic<bool> stop{false};
  std::vector<std::thread> actors;
  std::mutex actor_error_mutex;
  std::string actor_error;
  if (h.async) {
    channel.publish(policy);
    for (int a = 0; a < h.actors; ++a) {
      actors.emplace_back([&, a] {
        try {
          auto env = run.env->clone();
          Rng rng(run.seed * 7919ULL + static_cast<std::uint64_t>(a) + 1);
          while (!stop.load()) {
            const auto snap = channel.get();
            store(collect_episode(*env, *snap, run.discount, rng));
          }
        } catch (const std::exception& e) {
          std::lock_guard lock(actor_error_mutex);
          actor_error = e.what();
          stop = true;
        }
      });
    }
  }
  const auto join_actors = [&] {
    stop = true;
    for (auto& t : actors) t.join();
    actors.clear();
  };

  try {
    if (h.async) {
      while (replay.size() == 0 && !stop.load()) std::this_thread::yield();
    } else {
      for (int e = 0; e < std::max(1, h.warmup_episodes); ++e)
        store(collect_episode(*run.env, policy, run.discount, run.rng));
    }
    long learner_step = 0;
    for (int it = 1; it <= run.config.iterations; ++it) {
      if (!h.async)
        for (int e = 0; e < h.episodes_per_iteration; ++e)
          store(collect_episode(*run.env, policy, run.discount, run.rng));
      ImprovementDiagnostics diag;
      for (int ls = 0; ls < h.learner_steps_per_iteration; ++ls) {
        update_critics(run, critics, replay, pi_old);
        const auto states = visited ? visited->states()
                                    : replay.sample_states(static_cast<std::size_t>(h.batch_size), run.rng);
        ImprovementBatch batch = h.action_sampling == "enumerate"
                                     ? enumerate_batch(pi_old, states)
                                     : sample_batch(pi_old, states, h.actions_per_state, run.rng);
        for (int k = 0; k < run.num_objectives; ++k) {
          Matrix qk(batch.num_states(), batch.num_samples());
          for (int i = 0; i < batch.num_states(); ++i)
            for (int j = 0; j < batch.num_samples(); ++j)
              qk(i, j) = critic_q(critics, *run.env, enc, k, batch.states[static_cast<std::size_t>(i)],
                                  batch.actions[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
          batch.q.push_back(std::move(qk));
        }
        diag = improve(policy, pi_old, batch, run.preference, run.temperatures, run.fit_state, run.options);
        track_step_kl(run.record, diag.fit);
        if (++learner_step % h.target_period == 0) {
          pi_old = policy;
          if (critics.tabular) critics.table.sync_targets();
          else critics.nets.sync_targets();
        }
        if (h.async) channel.publish(policy);
      }
      if (h.async && stop.load()) break;
      // Step KLs were tracked above; log() would count the last fit twice.
      FitReport fit = diag.fit;
      diag.fit.step_kl.clear();
      diag.fit.step_kl_mean.clear();
      diag.fit.step_kl_cov.clear();
      run.log(it, diag, policy);
      diag.fit = fit;
    }
  } catch (...) {
    join_actors();
    throw;
  }
  join_actors();
  if (!actor_error.empty()) throw NumericalError("actor failed: " + actor_error);
  run.finish(policy, run.config.iterations);
}

void train_on_policy(Run& run) {
  const auto& h = run.h;
  const Encoding enc = run.env->encoding();
  Policy policy = make_policy(*run.env, h, false, run.rng);
  std::vector<bool> action_only;
  for (int k = 0; k < run.num_objectives; ++k) action_only.push_back(run.env->action_only_reward(k));
  VNetworkBank::Options o{h.critic_hidden, h.layer_norm, h.critic_lr, h.adam_epsilon};
  VNetworkBank values(run.num_objectives, enc, o, run.rng);
  const bool scalarized = run.preference.mode == PreferenceMode::weights;
  const Vector epsilons = scalarized ? Vector::Constant(1, h.scalarized_epsilon) : run.preference.values;

  run.start(policy);
  for (int it = 1; it <= run.config.iterations; ++it) {
    const Policy pi_old = policy;
    std::vector<std::vector<Transition>> segments;
    for (int e = 0; e < std::max(1, h.episodes_per_iteration); ++e) {
      Trajectory traj = collect_episode(*run.env, pi_old, run.discount, run.rng);
      const std::size_t n = h.segment_length > 0 ? static_cast<std::size_t>(h.segment_length) : traj.size();
      for (std::size_t b = 0; b < traj.size(); b += n)
        segments.emplace_back(traj.transitions.begin() + static_cast<std::ptrdiff_t>(b),
                              traj.transitions.begin() + static_cast<std::ptrdiff_t>(std::min(traj.size(), b + n)));
    }
    std::vector<Vector> states;
    std::vector<std::vector<Action>> actions;
    for (const auto& seg : segments)
      for (const auto& t : seg) {
        states.push_back(t.state);
        actions.push_back({t.action});
      }
    const auto B = static_cast<Eigen::Index>(states.size());
    std::vector<Vector> advantages(static_cast<std::size_t>(run.num_objectives), Vector(B));
    std::vector<Vector> targets(static_cast<std::size_t>(run.num_objectives), Vector(B));
    for (int k = 0; k < run.num_objectives; ++k) {
      Eigen::Index offset = 0;
      for (const auto& seg : segments) {
        const auto len = static_cast<Eigen::Index>(seg.size());
        if (action_only[static_cast<std::size_t>(k)]) {
          for (Eigen::Index t = 0; t < len; ++t)
            advantages[static_cast<std::size_t>(k)](offset + t) = seg[static_cast<std::size_t>(t)].rewards(k);
        } else {
          const NStepTargets nt =
              nstep_v_targets(seg, k, [&](const Vector& s) { return values.v(k, s); }, run.discount);
          advantages[static_cast<std::size_t>(k)].segment(offset, len) = nt.advantages;
          targets[static_cast<std::size_t>(k)].segment(offset, len) = nt.targets;
        }
        offset += len;
      }
    }
    std::vector<Vector> estep_adv = advantages;
    if (scalarized) {
      Vector combined = Vector::Zero(B);
      for (int k = 0; k < run.num_objectives; ++k) combined += run.preference.values(k) * advantages[static_cast<std::size_t>(k)];
      estep_adv = {combined};
    }
    const VmpoEStep estep = movmpo_estep(estep_adv, epsilons, run.temperatures, run.options.temperature);
    FitBatch fb{states, actions, {}};
    for (const auto& w : estep.weights)
      if (w.size() > 0) fb.weights.push_back(w);
    ImprovementDiagnostics diag;
    diag.objectives = estep.objectives;
    diag.fit = fit_policy(policy, pi_old, fb, run.fit_state, run.options.fit);
    for (int step = 0; step < h.critic_steps; ++step)
      for (int k = 0; k < run.num_objectives; ++k)
        if (!action_only[static_cast<std::size_t>(k)]) values.fit_v(k, states, targets[static_cast<std::size_t>(k)]);
    run.log(it, diag, policy);
  }
  run.finish(policy, run.config.iterations);
}

void write_dump(const std::string& dir, const RunRecord& rec, const std::string& message) {
  if (dir.empty()) return;
  fs::create_directories(dir);
  nlohmann::json j = run_summary(rec);
  j["error"] = message;
  nlohmann::json rows = nlohmann::json::array();
  const std::size_t from = rec.metrics.size() > 20 ? rec.metrics.size() - 20 : 0;
  for (std::size_t i = from; i < rec.metrics.size(); ++i) {
    const auto& m = rec.metrics[i];
    rows.push_back({{"iteration", m.iteration},
                    {"eta", to_json(m.eta)},
                    {"kl", to_json(m.kl)},
                    {"fit_kl", m.fit_kl},
                    {"nu", m.nu}});
  }
  j["last_rows"] = rows;
  write_json_file((fs::path(dir) / "diagnostic_dump.json").string(), j);
}

}  // namespace

RunRecord run_training(const ExperimentConfig& config, const PreferenceSpec& preference, std::uint64_t seed,
                       const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  Run run(config, preference, seed);
  nlohmann::json identity = config.to_json();
  identity.erase("sweep");
  identity["preference"] = to_json(preference);
  identity["seed"] = seed;
  run.record.config_hash = config_hash(identity);
  run.record.seed = seed;
  run.record.algorithm = config.algorithm;
  run.record.preference = preference;
  if ((config.algorithm == Algorithm::scalarized) != (preference.mode == PreferenceMode::weights))
    throw ConfigError("algorithm " + to_string(config.algorithm) + " cannot use a " + to_string(preference.mode) +
                      " preference");
  const bool bandit = dynamic_cast<const SimpleWorld*>(run.env.get()) != nullptr;
  try {
    if (config.algorithm == Algorithm::mo_vmpo) {
      train_on_policy(run);
    } else if (bandit && (config.hyper.critic == "auto" || config.hyper.critic == "exact")) {
      train_exact_bandit(run);
    } else {
      train_off_policy(run);
    }
  } catch (const NumericalError& e) {
    run.record.ok = false;
    run.record.error = e.what();
    write_dump(out_dir, run.record, e.what());
    throw;
  }
  run.record.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return std::move(run.record);
}

RunRecord run_training(const ExperimentConfig& config, std::uint64_t seed, const std::string& out_dir) {
  if (!config.preference) throw ConfigError("config has no single preference (use a sweep)");
  return run_training(config, *config.preference, seed, out_dir);
}

// ---------------------------------------------------------------------------
// Output files.

namespace {

void csv_cell(std::ostream& out, double v) {
  if (std::isfinite(v)) out << v;
  else if (std::isnan(v)) out << "nan";
  else out << (v > 0 ? "inf" : "-inf");
}

}  // namespace

void write_metrics_csv(const std::string& path, const RunRecord& record) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(10);
  Eigen::Index n_ret = record.initial_return.size();
  Eigen::Index n_obj = 0;
  for (const auto& m : record.metrics) n_obj = std::max(n_obj, m.eta.size());
  out << "iteration";
  for (Eigen::Index k = 0; k < n_ret; ++k) out << ",return_" << k;
  for (Eigen::Index k = 0; k < n_obj; ++k) out << ",eta_" << k << ",kl_" << k << ",dual_" << k;
  out << ",fit_kl,fit_kl_mean,fit_kl_cov,nu,nu_mean,nu_cov\n";
  for (const auto& m : record.metrics) {
    out << m.iteration;
    for (Eigen::Index k = 0; k < n_ret; ++k) {
      out << ',';
      if (m.mean_return.size() == n_ret) csv_cell(out, m.mean_return(k));
    }
    for (Eigen::Index k = 0; k < n_obj; ++k) {
      out << ',';
      if (m.eta.size() > k) csv_cell(out, m.eta(k));
      out << ',';
      if (m.kl.size() > k) csv_cell(out, m.kl(k));
      out << ',';
      if (m.dual.size() > k) csv_cell(out, m.dual(k));
    }
    out << ',' << m.fit_kl << ',' << m.fit_kl_mean << ',' << m.fit_kl_cov << ',' << m.nu << ',' << m.nu_mean
        << ',' << m.nu_cov << '\n';
  }
}

nlohmann::json run_summary(const RunRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["algorithm"] = to_string(r.algorithm);
  j["preference"] = to_json(r.preference);
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  j["iterations_run"] = r.iterations_run;
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  if (r.initial_return.size() > 0) j["initial_return"] = to_json(r.initial_return);
  if (r.final_return.size() > 0) {
    j["final_return"] = to_json(r.final_return);
    j["final_discounted_return"] = to_json(r.final_discounted_return);
  }
  j["max_step_kl"] = r.max_step_kl;
  j["max_step_kl_mean"] = r.max_step_kl_mean;
  j["max_step_kl_cov"] = r.max_step_kl_cov;
  return j;
}

void write_run(const RunRecord& record, const std::string& dir) {
  fs::create_directories(dir);
  write_metrics_csv((fs::path(dir) / "metrics.csv").string(), record);
  write_json_file((fs::path(dir) / "run.json").string(), run_summary(record));
  if (record.policy)
    write_json_file((fs::path(dir) / "policy.json").string(), policy_snapshot(*record.policy, record.snapshot_metadata));
}

void write_pareto(const std::string& dir, const ParetoSet& set) {
  fs::create_directories(dir);
  write_pareto_csv((fs::path(dir) / "pareto.csv").string(), set);
  write_json_file((fs::path(dir) / "summary.json").string(), pareto_summary(set));
}

SweepResult run_sweep(const ExperimentConfig& config, int parallel, const std::string& out_dir) {
  if (parallel < 1) throw ConfigError("parallel must be >= 1");
  const auto settings = config.settings();
  struct Job {
    PreferenceSpec preference;
    std::uint64_t seed;
    std::string id;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < settings.size(); ++s)
    for (const auto seed : config.seeds) {
      std::ostringstream id;
      id << "run_" << std::setw(4) << std::setfill('0') << s << "_seed" << seed;
      jobs.push_back({settings[s], seed, id.str()});
    }
  SweepResult result;
  result.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      const std::string dir = out_dir.empty() ? "" : (fs::path(out_dir) / job.id).string();
      RunRecord rec;
      try {
        rec = run_training(config, job.preference, job.seed, dir);
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
        rec.seed = job.seed;
        rec.algorithm = config.algorithm;
        rec.preference = job.preference;
      }
      rec.id = job.id;
      if (!dir.empty()) write_run(rec, dir);
      if (!rec.ok) std::cerr << "warning: " << job.id << " failed: " << rec.error << '\n';
      result.runs[i] = std::move(rec);
    }
  };
  std::vector<std::thread> pool;
  const int threads = std::min<int>(parallel, static_cast<int>(jobs.size()));
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  result.pareto.reference = config.reference;
  for (const auto& r : result.runs)
    if (r.ok) result.pareto.add(r.id, r.final_return);
  result.pareto.update();
  if (!out_dir.empty()) write_pareto(out_dir, result.pareto);
  return result;
}

ParetoSet collect_pareto(const std::string& runs_dir, const Vector& reference) {
  if (!fs::is_directory(runs_dir)) throw ConfigError("not a directory: " + runs_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(runs_dir))
    if (entry.is_regular_file() && entry.path().filename() == "run.json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  ParetoSet set;
  set.reference = reference;
  for (const auto& f : files) {
    const nlohmann::json j = read_json_file(f.string());
    if (!j.value("ok", false) || !j.contains("final_return")) continue;
    std::string id = j.value("id", std::string());
    if (id.empty()) id = f.parent_path().filename().string();
    Vector ret = vector_from_json(j["final_return"]);
    if (reference.size() != 0 && ret.size() != reference.size())
      throw ConfigError(f.string() + ": return length does not match the reference point");
    set.add(id, ret);
  }
  set.update();
  return set;
}

}  // namespace mompo
