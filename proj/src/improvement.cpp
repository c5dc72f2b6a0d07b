#include "mompo/improvement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace mompo {

void ImprovementBatch::validate() const {
  if (states.empty()) throw ConfigError("improvement batch has no states");
  if (actions.size() != states.size()) throw ConfigError("improvement batch: actions/states length mismatch");
  const auto M = actions.front().size();
  if (M == 0) throw ConfigError("improvement batch: no actions per state");
  for (const auto& row : actions)
    if (row.size() != M) throw ConfigError("improvement batch: ragged action rows");
  const auto L = static_cast<Eigen::Index>(states.size());
  for (const auto& qk : q) {
    if (qk.rows() != L || qk.cols() != static_cast<Eigen::Index>(M))
      throw ConfigError("improvement batch: Q matrix has wrong shape");
    if (!qk.allFinite()) throw NumericalError("improvement batch: non-finite Q values");
  }
  if (log_prior.size() != 0 && (log_prior.rows() != L || log_prior.cols() != static_cast<Eigen::Index>(M)))
    throw ConfigError("improvement batch: log prior has wrong shape");
}

ImprovementBatch sample_batch(const Policy& pi_old, const std::vector<Vector>& states, int num_actions_per_state,
                              Rng& rng) {
  if (num_actions_per_state < 1) throw ConfigError("need at least one action per state");
  ImprovementBatch b;
  b.states = states;
  b.actions.resize(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    b.actions[i].reserve(static_cast<std::size_t>(num_actions_per_state));
    for (int j = 0; j < num_actions_per_state; ++j) b.actions[i].push_back(sample(pi_old, states[i], rng));
  }
  b.log_prior = Matrix::Constant(static_cast<Eigen::Index>(states.size()), num_actions_per_state,
                                 -std::log(static_cast<double>(num_actions_per_state)));
  return b;
}

ImprovementBatch enumerate_batch(const Policy& pi_old, const std::vector<Vector>& states) {
  if (!is_categorical(pi_old)) throw ConfigError("enumerate_batch requires a categorical policy");
  ImprovementBatch b;
  b.states = states;
  const auto L = static_cast<Eigen::Index>(states.size());
  for (Eigen::Index i = 0; i < L; ++i) {
    const Vector p = categorical_distribution(pi_old, states[static_cast<std::size_t>(i)]);
    if (i == 0) b.log_prior.resize(L, p.size());
    std::vector<Action> row;
    for (Eigen::Index a = 0; a < p.size(); ++a) row.emplace_back(static_cast<int>(a));
    b.actions.push_back(std::move(row));
    b.log_prior.row(i) = p.array().log().matrix().transpose();
  }
  return b;
}

// ---------------------------------------------------------------------------

namespace {

double prior_at(const Matrix& log_prior, Eigen::Index i, Eigen::Index j, double uniform) {
  return log_prior.size() == 0 ? uniform : log_prior(i, j);
}

}  // namespace

DualDerivatives dual_derivatives(double eta, double epsilon, const Matrix& q, const Matrix& log_prior) {
  if (!(eta > 0.0)) throw ConfigError("temperature must be positive");
  if (q.size() == 0) throw ConfigError("dual: empty Q matrix");
  const double uniform = -std::log(static_cast<double>(q.cols()));
  const double inv = std::isinf(eta) ? 0.0 : 1.0 / eta;
  double sum_logz = 0.0;
  double sum_kl = 0.0;
  double sum_var = 0.0;
  Vector y(q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) y(j) = q(i, j) * inv + prior_at(log_prior, i, j, uniform);
    const double m = y.maxCoeff();
    const double log_sum = std::log((y.array() - m).exp().sum());
    sum_logz += m + log_sum;
    double mean_q = 0.0;
    double mean_q2 = 0.0;
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      const double lp = prior_at(log_prior, i, j, uniform);
      if (!std::isfinite(lp)) continue;
      const double log_w = (y(j) - m) - log_sum;
      const double w = std::exp(log_w);
      if (w <= 0.0) continue;
      sum_kl += w * (log_w - lp);
      mean_q += w * q(i, j);
      mean_q2 += w * q(i, j) * q(i, j);
    }
    sum_var += std::max(0.0, mean_q2 - mean_q * mean_q);
  }
  const double L = static_cast<double>(q.rows());
  DualDerivatives d;
  // eta * logZ(eta) tends to E_prior[Q] as eta grows; keep the value finite.
  d.value = std::isinf(eta) ? std::numeric_limits<double>::infinity() : eta * epsilon + eta * sum_logz / L;
  d.gradient = epsilon - std::max(0.0, sum_kl / L);
  d.curvature = std::isinf(eta) ? 0.0 : sum_var / L * inv * inv * inv;
  return d;
}

double dual_value(double eta, double epsilon, const Matrix& q, const Matrix& log_prior) {
  return dual_derivatives(eta, epsilon, q, log_prior).value;
}

TemperatureState TemperatureState::initial(int n, double eta0, double lower_bound) {
  if (!(eta0 > 0.0)) throw ConfigError("initial temperature must be positive");
  return {Vector::Constant(n, eta0), lower_bound};
}

double solve_temperature(double eta, double epsilon, const Matrix& q, int steps, double lr, double lower_bound,
                         const Matrix& log_prior) {
  if (!(eta > 0.0)) throw ConfigError("temperature must be positive");
  for (int s = 0; s < steps; ++s) {
    const double g = dual_derivatives(eta, epsilon, q, log_prior).gradient;
    if (!std::isfinite(g)) throw NumericalError("temperature dual: non-finite gradient");
    eta = std::max(lower_bound, eta - lr * g);
  }
  return eta;
}

double solve_temperature_converged(double epsilon, const Matrix& q, double lower_bound, double tolerance,
                                   const Matrix& log_prior) {
  if (epsilon < 0.0) throw ConfigError("epsilon must be nonnegative");
  const auto grad = [&](double eta) {
    const double g = dual_derivatives(eta, epsilon, q, log_prior).gradient;
    if (!std::isfinite(g)) throw NumericalError("temperature dual: non-finite gradient");
    return g;
  };
  double lo = lower_bound;
  if (grad(lo) >= 0.0) return lo;
  if (epsilon == 0.0) return std::numeric_limits<double>::infinity();
  double hi = std::max(1.0, 2.0 * lo);
  while (grad(hi) < 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) return hi;
  }
  double mid = hi;
  for (int it = 0; it < 400; ++it) {
    mid = std::sqrt(lo * hi);
    const double g = grad(mid);
    if (std::abs(g) < tolerance) return mid;
    (g < 0.0 ? lo : hi) = mid;
    if (hi / lo - 1.0 < 1e-15) break;
  }
  return mid;
}

double solve_temperature(double eta, double epsilon, const Matrix& q, const TemperatureOptions& options,
                         const Matrix& log_prior) {
  if (options.mode == TemperatureOptions::Mode::converged)
    return solve_temperature_converged(epsilon, q, options.lower_bound, options.tolerance, log_prior);
  return solve_temperature(eta, epsilon, q, options.steps, options.lr, options.lower_bound, log_prior);
}

Matrix compute_weights(const Matrix& q, double eta, const Matrix& log_prior) {
  if (!(eta > 0.0)) throw ConfigError("temperature must be positive");
  const double uniform = -std::log(static_cast<double>(q.cols()));
  const double inv = std::isinf(eta) ? 0.0 : 1.0 / eta;
  Matrix w(q.rows(), q.cols());
  Vector y(q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) y(j) = q(i, j) * inv + prior_at(log_prior, i, j, uniform);
    w.row(i) = softmax(y).transpose();
  }
  return w;
}

double sample_kl(const Matrix& weights, const Matrix& log_prior) {
  const double uniform = -std::log(static_cast<double>(weights.cols()));
  double kl = 0.0;
  for (Eigen::Index i = 0; i < weights.rows(); ++i)
    for (Eigen::Index j = 0; j < weights.cols(); ++j) {
      const double w = weights(i, j);
      if (w > 0.0) kl += w * (std::log(w) - prior_at(log_prior, i, j, uniform));
    }
  return std::max(0.0, kl / static_cast<double>(weights.rows()));
}

// ---------------------------------------------------------------------------

FitState FitState::initial(const FitOptions& options) {
  if (!(options.nu_init > 0.0)) throw ConfigError("initial nu must be positive");
  FitState s;
  s.u = s.u_mean = s.u_cov = softplus_inverse(options.nu_init);
  s.theta_adam.lr = options.lr;
  s.theta_adam.epsilon = options.adam_epsilon;
  s.nu_adam.lr = options.nu_lr;
  s.nu_adam.epsilon = 1e-8;
  return s;
}

double fit_objective(const Vector& pi, const std::vector<Vector>& weights) {
  double v = 0.0;
  for (const auto& w : weights)
    for (Eigen::Index a = 0; a < w.size(); ++a)
      if (w(a) > 0.0) v += w(a) * std::log(pi(a));
  return v;
}

Vector exact_fit_single_state(const Vector& pi_old, const std::vector<Vector>& weights, double beta) {
  if (beta < 0.0) throw ConfigError("trust region beta must be nonnegative");
  Vector pbar = Vector::Zero(pi_old.size());
  for (const auto& w : weights) {
    if (w.size() != pi_old.size()) throw ConfigError("exact fit: weight/policy size mismatch");
    if ((w.array() < 0.0).any()) throw ConfigError("exact fit: negative weight");
    pbar += w;
  }
  const double total = pbar.sum();
  if (!(total > 0.0)) return pi_old;
  const Vector target = pbar / total;
  const auto mix = [&](double t) -> Vector { return (1.0 - t) * target + t * pi_old; };
  const auto kl_at = [&](double t) {
    const Vector p = mix(t);
    for (Eigen::Index a = 0; a < p.size(); ++a)
      if (pi_old(a) > 0.0 && !(p(a) > 0.0)) return std::numeric_limits<double>::infinity();
    return kl_categorical(pi_old, p);
  };
  if (kl_at(0.0) <= beta) return target;
  if (beta == 0.0) return pi_old;
  // pi_nu = (pbar + nu pi_old) / (total + nu) is the mixture with
  // t = nu / (total + nu); the KL falls monotonically in t.
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (kl_at(mid) > beta ? lo : hi) = mid;
  }
  return mix(hi);
}

namespace {

struct Normalized {
  std::vector<Matrix> w;  // each divided by its total
};

Normalized normalize(const FitBatch& batch) {
  Normalized n;
  for (const auto& w : batch.weights) {
    const double s = w.sum();
    if (!(s > 0.0) || !std::isfinite(s)) throw NumericalError("fit: weights do not have positive finite mass");
    n.w.push_back(w / s);
  }
  return n;
}

void validate_fit_batch(const FitBatch& batch) {
  if (batch.states.empty()) throw ConfigError("fit: empty batch");
  if (batch.actions.size() != batch.states.size()) throw ConfigError("fit: actions/states length mismatch");
  for (const auto& w : batch.weights) {
    if (w.rows() != static_cast<Eigen::Index>(batch.states.size())) throw ConfigError("fit: weight rows mismatch");
    for (std::size_t i = 0; i < batch.actions.size(); ++i)
      if (static_cast<Eigen::Index>(batch.actions[i].size()) != w.cols()) throw ConfigError("fit: weight cols mismatch");
  }
}

FitReport fit_tabular(TabularCategoricalPolicy& policy, const Policy& pi_old, const FitBatch& batch,
                      const FitOptions& options) {
  const Normalized nw = normalize(batch);
  const int A = policy.num_actions();
  std::vector<int> order;
  std::vector<Vector> mass(static_cast<std::size_t>(policy.probs.rows()));
  for (std::size_t i = 0; i < batch.states.size(); ++i) {
    const int s = policy.encoding.index(batch.states[i]);
    auto& m = mass[static_cast<std::size_t>(s)];
    if (m.size() == 0) {
      m = Vector::Zero(A);
      order.push_back(s);
    }
    for (const auto& w : nw.w)
      for (std::size_t j = 0; j < batch.actions[i].size(); ++j)
        m(discrete_action(batch.actions[i][j])) += w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  FitReport r;
  for (const int s : order) {
    Vector old_row;
    if (const auto* t = std::get_if<TabularCategoricalPolicy>(&pi_old)) {
      old_row = t->probs.row(s).transpose();
    } else {
      throw ConfigError("tabular fit requires a tabular pi_old");
    }
    const Vector fitted = exact_fit_single_state(old_row, {mass[static_cast<std::size_t>(s)]}, options.beta);
    policy.probs.row(s) = fitted.transpose();
    r.kl += kl_categorical(old_row, fitted);
    r.loss -= fit_objective(fitted, {mass[static_cast<std::size_t>(s)]});
  }
  r.kl /= static_cast<double>(order.size());
  r.step_kl.push_back(r.kl);
  return r;
}

/// Backtracks from `after` toward `before` until `ok` holds; reverts fully
/// if it never does.
template <typename Accept>
void backtrack(Vector& params, const Vector& before, Accept&& ok) {
  const Vector step = params - before;
  double alpha = 1.0;
  for (int i = 0; i < 30; ++i) {
    if (ok()) return;
    alpha *= 0.5;
    params = before + alpha * step;
  }
  if (!ok()) params = before;
}

FitReport fit_categorical(ParametricCategoricalPolicy& policy, const Policy& pi_old, const FitBatch& batch,
                          FitState& state, const FitOptions& options) {
  const Normalized nw = normalize(batch);
  const auto L = static_cast<Eigen::Index>(batch.states.size());
  const int A = policy.num_actions();
  const Matrix F = policy.encoding.features(batch.states);
  Matrix p_old(A, L);
  Matrix log_p_old(A, L);
  Matrix counts = Matrix::Zero(A, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    p_old.col(i) = categorical_distribution(pi_old, batch.states[static_cast<std::size_t>(i)]);
    log_p_old.col(i) = p_old.col(i).array().log().matrix();
    for (const auto& w : nw.w)
      for (std::size_t j = 0; j < batch.actions[static_cast<std::size_t>(i)].size(); ++j)
        counts(discrete_action(batch.actions[static_cast<std::size_t>(i)][j]), i) += w(i, static_cast<Eigen::Index>(j));
  }
  const Eigen::RowVectorXd count_mass = counts.colwise().sum();

  const auto log_softmax_cols = [](const Matrix& z) {
    Matrix out(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.cols(); ++i) out.col(i) = log_softmax(z.col(i));
    return out;
  };
  const auto mean_kl = [&](const Matrix& log_p) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < L; ++i)
      for (Eigen::Index a = 0; a < A; ++a)
        if (p_old(a, i) > 0.0) kl += p_old(a, i) * (log_p_old(a, i) - log_p(a, i));
    return std::max(0.0, kl / static_cast<double>(L));
  };
  const auto current_kl = [&] {
    const Matrix z = policy.net.forward(F);
    if (!z.allFinite()) throw NumericalError("fit: non-finite logits");
    return mean_kl(log_softmax_cols(z));
  };

  FitReport r;
  for (int step = 0; step < options.steps; ++step) {
    const double nu = state.nu();
    const Vector before = policy.net.parameters();
    const double kl_before = current_kl();
    auto [loss, g] = nn::grad(policy.net, F, [&](const Matrix& z) {
      const Matrix log_p = log_softmax_cols(z);
      const Matrix p = log_p.array().exp().matrix();
      const double ce = -(counts.array() * log_p.array()).sum();
      const double kl = mean_kl(log_p);
      Matrix dz = p.array().rowwise() * count_mass.array();
      dz -= counts;
      dz += (nu / static_cast<double>(L)) * (p - p_old);
      return std::pair<double, Matrix>{ce + nu * kl, dz};
    });
    nn::adam_step(policy.net.parameters(), g, state.theta_adam);
    double kl = current_kl();
    if (options.kl_safeguard && kl > options.beta && kl > kl_before) {
      backtrack(policy.net.parameters(), before, [&] {
        kl = current_kl();
        return kl <= std::max(options.beta, kl_before);
      });
    }
    if (!std::isfinite(kl)) throw NumericalError("fit: KL is not finite");
    r.loss = loss;
    r.kl = kl;
    r.step_kl.push_back(kl);
    Vector u{{state.u}};
    const Vector gu{{(options.beta - kl) * sigmoid(state.u)}};
    nn::adam_step(u, gu, state.nu_adam);
    state.u = u(0);
  }
  if (options.steps == 0) r.kl = current_kl();
  r.nu = state.nu();
  return r;
}

FitReport fit_gaussian(DiagonalGaussianPolicy& policy, const Policy& pi_old, const FitBatch& batch, FitState& state,
                       const FitOptions& options) {
  const auto* old_policy = std::get_if<DiagonalGaussianPolicy>(&pi_old);
  if (old_policy == nullptr) throw ConfigError("Gaussian fit requires a Gaussian pi_old");
  const Normalized nw = normalize(batch);
  const auto L = static_cast<Eigen::Index>(batch.states.size());
  const int d = policy.action_dim();
  const Matrix F = policy.encoding.features(batch.states);
  Matrix mu_old(d, L);
  Matrix sd_old(d, L);
  {
    const Matrix raw = old_policy->net.forward(old_policy->encoding.features(batch.states));
    for (Eigen::Index i = 0; i < L; ++i) {
      const Gaussian g = old_policy->from_output(raw.col(i));
      mu_old.col(i) = g.mean;
      sd_old.col(i) = g.stddev;
    }
  }
  // Weighted sufficient statistics per state: mass, first moment and second
  // moment about the old mean.
  Eigen::RowVectorXd W = Eigen::RowVectorXd::Zero(L);
  Matrix S1 = Matrix::Zero(d, L);
  Matrix S2 = Matrix::Zero(d, L);
  for (Eigen::Index i = 0; i < L; ++i)
    for (const auto& w : nw.w)
      for (std::size_t j = 0; j < batch.actions[static_cast<std::size_t>(i)].size(); ++j) {
        const double wij = w(i, static_cast<Eigen::Index>(j));
        if (wij == 0.0) continue;
        const Vector& a = continuous_action(batch.actions[static_cast<std::size_t>(i)][j]);
        if (a.size() != d) throw ConfigError("fit: action dimension mismatch");
        W(i) += wij;
        S1.col(i) += wij * a;
        S2.col(i) += wij * (a - mu_old.col(i)).cwiseAbs2();
      }
  const Matrix var_old = sd_old.cwiseAbs2();
  const double floor = std::sqrt(policy.min_variance);

  struct Heads {
    Matrix mu, sd, sig;  // sig = dsd/draw
    Matrix dmu_dm;
  };
  const auto heads = [&](const Matrix& out) {
    Heads h;
    h.mu = out.topRows(d);
    h.dmu_dm = Matrix::Ones(d, L);
    if (policy.tanh_mean) {
      h.mu = h.mu.array().tanh().matrix();
      h.dmu_dm = (1.0 - h.mu.array().square()).matrix();
    }
    const Matrix raw = out.bottomRows(d);
    h.sd = raw.unaryExpr([floor](double x) { return softplus(x) + floor; });
    h.sig = raw.unaryExpr([](double x) { return sigmoid(x); });
    return h;
  };
  const auto kls = [&](const Heads& h) {
    const double km = ((h.mu - mu_old).array().square() / (2.0 * var_old.array())).sum() / static_cast<double>(L);
    const auto ratio = h.sd.array() / sd_old.array();
    const double kc = (ratio.log() + 0.5 / ratio.square() - 0.5).sum() / static_cast<double>(L);
    return std::pair<double, double>{std::max(0.0, km), std::max(0.0, kc)};
  };
  const auto current = [&] {
    const Matrix out = policy.net.forward(F);
    if (!out.allFinite()) throw NumericalError("fit: non-finite policy output");
    return kls(heads(out));
  };

  FitReport r;
  for (int step = 0; step < options.steps; ++step) {
    const double nu_m = state.nu_mean();
    const double nu_c = state.nu_cov();
    const Vector before = policy.net.parameters();
    const auto [km0, kc0] = current();
    auto [loss, g] = nn::grad(policy.net, F, [&](const Matrix& out) {
      const Heads h = heads(out);
      const auto [km, kc] = kls(h);
      // Cross-entropy of pi^mu = N(mu, S_old) and pi^Sigma = N(mu_old, S).
      double ce = 0.0;
      Matrix dmu(d, L), dsd(d, L);
      for (Eigen::Index i = 0; i < L; ++i) {
        const auto mu = h.mu.col(i).array();
        const auto sd = h.sd.col(i).array();
        const auto v0 = var_old.col(i).array();
        // sum_j w (a - mu)^2 = S2' where moments are taken about mu.
        const auto s2_mu = S2.col(i).array() - 2.0 * (mu - mu_old.col(i).array()) *
                                                   (S1.col(i).array() - W(i) * mu_old.col(i).array()) +
                           W(i) * (mu - mu_old.col(i).array()).square();
        ce += (s2_mu / (2.0 * v0)).sum();
        ce += (S2.col(i).array() / (2.0 * sd.square()) + W(i) * sd.log()).sum();
        dmu.col(i) = (-(S1.col(i).array() - W(i) * mu) / v0).matrix();
        dsd.col(i) = (-S2.col(i).array() / sd.cube() + W(i) / sd).matrix();
        dmu.col(i) += (nu_m / static_cast<double>(L)) * ((mu - mu_old.col(i).array()) / v0).matrix();
        dsd.col(i) += (nu_c / static_cast<double>(L)) * (1.0 / sd - v0 / sd.cube()).matrix();
      }
      Matrix dout(2 * d, L);
      dout.topRows(d) = dmu.cwiseProduct(h.dmu_dm);
      dout.bottomRows(d) = dsd.cwiseProduct(h.sig);
      return std::pair<double, Matrix>{ce + nu_m * km + nu_c * kc, dout};
    });
    nn::adam_step(policy.net.parameters(), g, state.theta_adam);
    auto [km, kc] = current();
    const double bm = std::max(options.beta_mean, km0);
    const double bc = std::max(options.beta_cov, kc0);
    if (options.kl_safeguard && (km > bm || kc > bc)) {
      backtrack(policy.net.parameters(), before, [&] {
        std::tie(km, kc) = current();
        return km <= bm && kc <= bc;
      });
    }
    if (!std::isfinite(km) || !std::isfinite(kc)) throw NumericalError("fit: KL is not finite");
    r.loss = loss;
    r.kl_mean = km;
    r.kl_cov = kc;
    r.step_kl_mean.push_back(km);
    r.step_kl_cov.push_back(kc);
    Vector u{{state.u_mean, state.u_cov}};
    const Vector gu{{(options.beta_mean - km) * sigmoid(state.u_mean), (options.beta_cov - kc) * sigmoid(state.u_cov)}};
    nn::adam_step(u, gu, state.nu_adam);
    state.u_mean = u(0);
    state.u_cov = u(1);
  }
  if (options.steps == 0) std::tie(r.kl_mean, r.kl_cov) = current();
  r.nu_mean = state.nu_mean();
  r.nu_cov = state.nu_cov();
  return r;
}

}  // namespace

FitReport fit_policy(Policy& policy, const Policy& pi_old, const FitBatch& batch, FitState& state,
                     const FitOptions& options) {
  validate_fit_batch(batch);
  if (options.beta < 0.0 || options.beta_mean < 0.0 || options.beta_cov < 0.0)
    throw ConfigError("trust region bounds must be nonnegative");
  if (batch.weights.empty()) return {};
  if (auto* t = std::get_if<TabularCategoricalPolicy>(&policy)) return fit_tabular(*t, pi_old, batch, options);
  if (auto* p = std::get_if<ParametricCategoricalPolicy>(&policy))
    return fit_categorical(*p, pi_old, batch, state, options);
  return fit_gaussian(std::get<DiagonalGaussianPolicy>(policy), pi_old, batch, state, options);
}

// ---------------------------------------------------------------------------

ImprovementDiagnostics improvement_step(Policy& policy, const Policy& pi_old, const ImprovementBatch& batch,
                                        const Vector& epsilons, TemperatureState& temperatures, FitState& fit_state,
                                        const ImprovementOptions& options) {
  batch.validate();
  const int N = batch.num_objectives();
  if (epsilons.size() != N) throw ConfigError("improvement_step: need one epsilon per objective");
  if ((epsilons.array() < 0.0).any()) throw ConfigError("improvement_step: negative epsilon");
  if (temperatures.eta.size() == 0) temperatures = TemperatureState::initial(N, 1.0, options.temperature.lower_bound);
  if (temperatures.eta.size() != N) throw ConfigError("improvement_step: need one temperature per objective");

  ImprovementDiagnostics diag;
  FitBatch fb{batch.states, batch.actions, {}};
  for (int k = 0; k < N; ++k) {
    ObjectiveDiagnostics od;
    const auto& qk = batch.q[static_cast<std::size_t>(k)];
    if (epsilons(k) == 0.0) {
      od.ignored = true;
      od.eta = temperatures.eta(k);
      diag.objectives.push_back(od);
      continue;
    }
    double eta = solve_temperature(temperatures.eta(k), epsilons(k), qk, options.temperature, batch.log_prior);
    temperatures.eta(k) = eta;
    const Matrix w = compute_weights(qk, eta, batch.log_prior);
    od.eta = eta;
    od.dual = dual_value(eta, epsilons(k), qk, batch.log_prior);
    od.kl = sample_kl(w, batch.log_prior);
    diag.objectives.push_back(od);
    fb.weights.push_back(w);
  }
  diag.fit = fit_policy(policy, pi_old, fb, fit_state, options.fit);
  return diag;
}

ImprovementDiagnostics scalarized_improvement(Policy& policy, const Policy& pi_old, const ImprovementBatch& batch,
                                              const Vector& weights, double epsilon, TemperatureState& temperature,
                                              FitState& fit_state, const ImprovementOptions& options) {
  validate_preference(PreferenceSpec::weights(weights), batch.num_objectives());
  ImprovementBatch scalar;
  scalar.states = batch.states;
  scalar.actions = batch.actions;
  scalar.log_prior = batch.log_prior;
  Matrix q = Matrix::Zero(batch.q.front().rows(), batch.q.front().cols());
  for (int k = 0; k < batch.num_objectives(); ++k) q += weights(k) * batch.q[static_cast<std::size_t>(k)];
  scalar.q.push_back(std::move(q));
  return improvement_step(policy, pi_old, scalar, Vector::Constant(1, epsilon), temperature, fit_state, options);
}

ImprovementDiagnostics improve(Policy& policy, const Policy& pi_old, const ImprovementBatch& batch,
                               const PreferenceSpec& preference, TemperatureState& temperatures, FitState& fit_state,
                               const ImprovementOptions& options) {
  if (preference.mode == PreferenceMode::weights)
    return scalarized_improvement(policy, pi_old, batch, preference.values, options.scalarized_epsilon, temperatures,
                                  fit_state, options);
  return improvement_step(policy, pi_old, batch, preference.values, temperatures, fit_state, options);
}

std::vector<int> top_half(const Vector& advantages) {
  const auto n = static_cast<int>(advantages.size());
  if (n == 0) throw ConfigError("top_half: empty batch");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return advantages(a) > advantages(b); });
  idx.resize(static_cast<std::size_t>(std::max(1, n / 2)));
  return idx;
}

VmpoEStep movmpo_estep(const std::vector<Vector>& advantages, const Vector& epsilons, TemperatureState& temperatures,
                       const TemperatureOptions& options) {
  const int N = static_cast<int>(advantages.size());
  if (N == 0) throw ConfigError("movmpo_estep: no objectives");
  if (epsilons.size() != N) throw ConfigError("movmpo_estep: need one epsilon per objective");
  if (temperatures.eta.size() == 0) temperatures = TemperatureState::initial(N, 1.0, options.lower_bound);
  VmpoEStep out;
  for (int k = 0; k < N; ++k) {
    const Vector& adv = advantages[static_cast<std::size_t>(k)];
    if (!adv.allFinite()) throw NumericalError("movmpo_estep: non-finite advantages");
    ObjectiveDiagnostics od;
    if (epsilons(k) == 0.0) {
      od.ignored = true;
      od.eta = temperatures.eta(k);
      out.weights.emplace_back();
      out.retained.emplace_back();
      out.objectives.push_back(od);
      continue;
    }
    const std::vector<int> kept = top_half(adv);
    Matrix q(1, static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) q(0, static_cast<Eigen::Index>(j)) = adv(kept[j]);
    const double eta = solve_temperature(temperatures.eta(k), epsilons(k), q, options);
    temperatures.eta(k) = eta;
    const Matrix w = compute_weights(q, eta);
    Vector full = Vector::Zero(adv.size());
    for (std::size_t j = 0; j < kept.size(); ++j) full(kept[j]) = w(0, static_cast<Eigen::Index>(j));
    od.eta = eta;
    od.dual = dual_value(eta, epsilons(k), q);
    od.kl = sample_kl(w);
    out.weights.push_back(std::move(full));
    out.retained.push_back(kept);
    out.objectives.push_back(od);
  }
  return out;
}

}  // namespace mompo
