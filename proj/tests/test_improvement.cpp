#include "mompo/improvement.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mompo;

namespace {

Matrix random_q(int l, int m, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix q(l, m);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = n(rng);
  return q;
}

Vector random_simplex(int n, Rng& rng) {
  std::exponential_distribution<double> e(1.0);
  Vector p(n);
  for (int i = 0; i < n; ++i) p(i) = e(rng) + 1e-3;
  return p / p.sum();
}

TabularCategoricalPolicy random_tabular(int states, int actions, Rng& rng) {
  auto p = TabularCategoricalPolicy::uniform(states, actions, Encoding::grid(1, states));
  for (int s = 0; s < states; ++s) p.probs.row(s) = random_simplex(actions, rng).transpose();
  return p;
}

std::vector<Vector> grid_states(int n) {
  std::vector<Vector> out;
  for (int s = 0; s < n; ++s) out.push_back(Vector{{0.0, static_cast<double>(s)}});
  return out;
}

}  // namespace

TEST(Dual, GradientMatchesFiniteDifference) {
  Rng rng(1);
  const Matrix q = random_q(5, 7, rng, 2.0);
  for (const double eta : {0.3, 1.0, 4.0}) {
    const auto d = dual_derivatives(eta, 0.05, q);
    const double h = 1e-5;
    const double fd = (dual_value(eta + h, 0.05, q) - dual_value(eta - h, 0.05, q)) / (2 * h);
    const double fd2 = (dual_value(eta + h, 0.05, q) - 2 * d.value + dual_value(eta - h, 0.05, q)) / (h * h);
    EXPECT_NEAR(d.value, dual_value(eta, 0.05, q), 1e-12);
    EXPECT_NEAR(d.gradient, fd, 1e-6);
    EXPECT_NEAR(d.curvature, fd2, 1e-3 * std::max(1.0, std::abs(fd2)));
  }
}

TEST(Dual, ConvergedTemperatureSpendsTheBudget) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix q = random_q(8, 10, rng, 3.0);
    const double eps = 0.01 * (trial + 1);
    const double eta = solve_temperature_converged(eps, q, 1e-8, 1e-12);
    EXPECT_NEAR(sample_kl(compute_weights(q, eta)), eps, 1e-8);
  }
}

TEST(Dual, ConvergedTemperatureWithEnumeratedPrior) {
  Rng rng(3);
  const Matrix q = random_q(4, 4, rng);
  Matrix lp(4, 4);
  for (int i = 0; i < 4; ++i) lp.row(i) = random_simplex(4, rng).array().log().transpose();
  const double eta = solve_temperature_converged(0.02, q, 1e-8, 1e-12, lp);
  const Matrix w = compute_weights(q, eta, lp);
  double kl = 0.0;
  for (int i = 0; i < 4; ++i) kl += kl_categorical(w.row(i).transpose(), lp.row(i).array().exp().matrix().transpose());
  EXPECT_NEAR(kl / 4, 0.02, 1e-8);
  EXPECT_NEAR(sample_kl(w, lp), 0.02, 1e-8);
}

TEST(Dual, GradientStepsDescendAndRespectTheBound) {
  Rng rng(4);
  const Matrix q = random_q(6, 6, rng);
  const double before = dual_value(2.0, 0.1, q);
  const double eta = solve_temperature(2.0, 0.1, q, 50, 0.01, 1e-8);
  EXPECT_LT(dual_value(eta, 0.1, q), before);
  // a huge step is clipped at the bound rather than going negative
  EXPECT_DOUBLE_EQ(solve_temperature(0.5, 100.0, q, 1, 10.0, 0.25), 0.25);
}

TEST(Weights, LimitsOfTheTemperature) {
  const Matrix q{{1.0, 3.0, 2.0}};
  const Matrix hot = compute_weights(q, 1e6);
  EXPECT_NEAR(hot(0, 0), 1.0 / 3.0, 1e-5);
  const Matrix cold = compute_weights(q, 1e-3);
  EXPECT_NEAR(cold(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(compute_weights(q, 0.7).sum(), 1.0, 1e-12);
  EXPECT_NEAR(sample_kl(hot), 0.0, 1e-9);
}

TEST(Fit, ExactSingleStateRespectsTrustRegion) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector old = random_simplex(3, rng);
    const std::vector<Vector> w{random_simplex(3, rng), random_simplex(3, rng)};
    const double beta = 1e-3 * (trial + 1);
    const Vector pi = exact_fit_single_state(old, w, beta);
    EXPECT_NEAR(pi.sum(), 1.0, 1e-12);
    EXPECT_LE(kl_categorical(old, pi), beta + 1e-9);
    // no feasible random point does better
    for (int j = 0; j < 200; ++j) {
      const Vector cand = random_simplex(3, rng);
      if (kl_categorical(old, cand) <= beta) {
        EXPECT_LE(fit_objective(cand, w), fit_objective(pi, w) + 1e-9);
      }
    }
  }
}

TEST(Fit, LooseTrustRegionGivesTheMixture) {
  const Vector old{{0.4, 0.3, 0.3}};
  const std::vector<Vector> w{Vector{{0.6, 0.2, 0.2}}, Vector{{0.2, 0.2, 0.6}}};
  const Vector pi = exact_fit_single_state(old, w, 10.0);
  EXPECT_NEAR(pi(0), 0.4, 1e-9);
  EXPECT_NEAR(pi(1), 0.2, 1e-9);
  EXPECT_NEAR(pi(2), 0.4, 1e-9);
}

TEST(Fit, TabularFitKeepsEveryStateInside) {
  Rng rng(6);
  const auto old = random_tabular(4, 3, rng);
  Policy pol = old;
  Policy pold = old;
  const auto batch = enumerate_batch(pold, grid_states(4));
  FitBatch fb{batch.states, batch.actions, {compute_weights(random_q(4, 3, rng, 5.0), 0.1, batch.log_prior)}};
  FitOptions opt;
  opt.beta = 2e-3;
  FitState st = FitState::initial(opt);
  const FitReport r = fit_policy(pol, pold, fb, st, opt);
  const auto& np = std::get<TabularCategoricalPolicy>(pol);
  for (int s = 0; s < 4; ++s)
    EXPECT_LE(kl_categorical(old.probs.row(s).transpose(), np.probs.row(s).transpose()), opt.beta + 1e-9);
  EXPECT_LE(r.kl, opt.beta + 1e-9);
}

TEST(Fit, GaussianDecoupledStepsStayInsideBounds) {
  Rng rng(7);
  Policy pol = make_gaussian_policy(Encoding::identity(2), 1, {16}, false, 0.5, 1e-12, rng);
  const Policy old = pol;
  std::vector<Vector> states;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 16; ++i) states.push_back(Vector{{n(rng), n(rng)}});
  const auto batch = sample_batch(old, states, 10, rng);
  Matrix q(16, 10);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 10; ++j) q(i, j) = continuous_action(batch.actions[i][j])(0) * 5.0;
  FitBatch fb{batch.states, batch.actions, {compute_weights(q, 0.5)}};
  FitOptions opt;
  opt.beta_mean = 1e-3;
  opt.beta_cov = 1e-5;
  opt.steps = 20;
  opt.lr = 1e-2;
  FitState st = FitState::initial(opt);
  const FitReport r = fit_policy(pol, old, fb, st, opt);
  ASSERT_EQ(r.step_kl_mean.size(), 20u);
  for (const double k : r.step_kl_mean) EXPECT_LE(k, 1.1 * opt.beta_mean);
  for (const double k : r.step_kl_cov) EXPECT_LE(k, 1.1 * opt.beta_cov);
  EXPECT_GT(r.kl_mean, 0.0);
}

TEST(Improvement, ZeroEpsilonDropsTheObjective) {
  Rng rng(8);
  const auto old = random_tabular(3, 4, rng);
  const Policy pold = old;
  auto batch = enumerate_batch(pold, grid_states(3));
  batch.q = {random_q(3, 4, rng), random_q(3, 4, rng)};
  ImprovementOptions opt;
  opt.temperature.mode = TemperatureOptions::Mode::converged;

  Policy a = old;
  TemperatureState ta = TemperatureState::initial(2);
  FitState fa = FitState::initial(opt.fit);
  const auto da = improvement_step(a, pold, batch, Vector{{0.05, 0.0}}, ta, fa, opt);
  EXPECT_TRUE(da.objectives[1].ignored);

  Policy b = old;
  auto single = batch;
  single.q = {batch.q[0]};
  TemperatureState tb = TemperatureState::initial(1);
  FitState fb = FitState::initial(opt.fit);
  improvement_step(b, pold, single, Vector{{0.05}}, tb, fb, opt);
  EXPECT_LT((std::get<TabularCategoricalPolicy>(a).probs - std::get<TabularCategoricalPolicy>(b).probs)
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
}

TEST(Improvement, SingleObjectiveMatchesScalarizedUnitWeight) {
  Rng rng(9);
  const auto old = random_tabular(3, 4, rng);
  const Policy pold = old;
  auto batch = enumerate_batch(pold, grid_states(3));
  batch.q = {random_q(3, 4, rng)};
  ImprovementOptions opt;
  opt.scalarized_epsilon = 0.03;
  Policy a = old, b = old;
  TemperatureState ta = TemperatureState::initial(1), tb = TemperatureState::initial(1);
  FitState fa = FitState::initial(opt.fit), fb = FitState::initial(opt.fit);
  improvement_step(a, pold, batch, Vector{{0.03}}, ta, fa, opt);
  scalarized_improvement(b, pold, batch, Vector{{1.0}}, 0.03, tb, fb, opt);
  EXPECT_NEAR(ta.eta(0), tb.eta(0), 1e-12);
  EXPECT_LT((std::get<TabularCategoricalPolicy>(a).probs - std::get<TabularCategoricalPolicy>(b).probs)
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
}

TEST(Batches, EnumerateCarriesPolicyMass) {
  Rng rng(10);
  const Policy p = random_tabular(2, 3, rng);
  const auto b = enumerate_batch(p, grid_states(2));
  ASSERT_EQ(b.num_samples(), 3);
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 3; ++a)
      EXPECT_NEAR(std::exp(b.log_prior(s, a)), categorical_distribution(p, grid_states(2)[s])(a), 1e-14);
  const auto sb = sample_batch(p, grid_states(2), 5, rng);
  EXPECT_EQ(sb.num_samples(), 5);
  EXPECT_NEAR(sb.log_prior(1, 4), std::log(0.2), 1e-14);
}

TEST(Vmpo, TopHalfOrderAndTies) {
  EXPECT_EQ(top_half(Vector{{1.0, 5.0, 3.0, 4.0}}), (std::vector<int>{1, 3}));
  EXPECT_EQ(top_half(Vector{{2.0, 2.0, 2.0}}), (std::vector<int>{0}));
  EXPECT_EQ(top_half(Vector{{-1.0}}), (std::vector<int>{0}));
}

TEST(Vmpo, EStepWeightsLiveOnTheRetainedSet) {
  Rng rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vector> adv(2, Vector(10));
  for (auto& a : adv)
    for (int i = 0; i < 10; ++i) a(i) = n(rng);
  TemperatureState t = TemperatureState::initial(2);
  TemperatureOptions opt;
  opt.mode = TemperatureOptions::Mode::converged;
  const auto e = movmpo_estep(adv, Vector{{0.1, 0.0}}, t, opt);
  EXPECT_EQ(e.weights[1].size(), 0);
  EXPECT_NEAR(e.weights[0].sum(), 1.0, 1e-12);
  std::vector<bool> kept(10, false);
  for (const int i : e.retained[0]) kept[static_cast<std::size_t>(i)] = true;
  for (int i = 0; i < 10; ++i)
    if (!kept[static_cast<std::size_t>(i)]) {
      EXPECT_EQ(e.weights[0](i), 0.0);
    }
  EXPECT_EQ(e.retained[0].size(), 5u);
}
