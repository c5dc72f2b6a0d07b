#pragma once

#include "mompo/nn.hpp"
#include "mompo/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <variant>
#include <vector>

namespace mompo {

/// Maps raw environment states to network features and, for grid worlds, to
/// table indices.
struct Encoding {
  enum class Kind { identity, one_hot_grid };

  Kind kind = Kind::identity;
  int state_dim = 1;
  int rows = 1;
  int cols = 1;

  static Encoding identity(int state_dim) { return {Kind::identity, state_dim, 1, 1}; }
  /// States are (row, col) pairs, or a single 0 for a one-cell grid.
  static Encoding grid(int rows, int cols) { return {Kind::one_hot_grid, 2, rows, cols}; }

  int feature_dim() const { return kind == Kind::identity ? state_dim : rows * cols; }
  int num_states() const;
  int index(const Vector& state) const;
  Vector features(const Vector& state) const;
  Matrix features(const std::vector<Vector>& states) const;
};

// ---------------------------------------------------------------------------
// Numerically stable helpers, generic over Eigen expressions.

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  const S m = x.maxCoeff();
  if (!std::isfinite(static_cast<double>(m))) return m;
  return m + std::log((x.array() - m).exp().sum());
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, Eigen::Dynamic, 1> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  return (logits.array() - log_sum_exp(logits)).matrix();
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

/// KL(p || q) = sum p ln(p / q) in nats. Throws ConfigError when q has no
/// mass where p does.
template <typename DP, typename DQ>
double kl_categorical(const Eigen::MatrixBase<DP>& p, const Eigen::MatrixBase<DQ>& q) {
  if (p.size() != q.size()) throw ConfigError("kl_categorical: size mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p(i);
    if (pi <= 0.0) continue;
    if (!(q(i) > 0.0)) throw ConfigError("kl_categorical: q has no support where p > 0");
    kl += pi * std::log(pi / q(i));
  }
  return kl < 0.0 ? 0.0 : kl;
}

// ---------------------------------------------------------------------------
// Policy families.

struct TabularCategoricalPolicy {
  Matrix probs;  // states x actions
  Encoding encoding = Encoding::grid(1, 1);

  static TabularCategoricalPolicy uniform(int num_states, int num_actions, Encoding encoding);
  int num_actions() const { return static_cast<int>(probs.cols()); }
  Vector distribution(const Vector& state) const;
  void validate() const;
};

struct ParametricCategoricalPolicy {
  nn::Net net;
  Encoding encoding;

  int num_actions() const { return net.output_dim(); }
  Vector logits(const Vector& state) const;
  Vector distribution(const Vector& state) const;
};

/// Diagonal Gaussian with mean and softplus-positive scales.
struct Gaussian {
  Vector mean;
  Vector stddev;

  int dim() const { return static_cast<int>(mean.size()); }
};

struct DiagonalGaussianPolicy {
  /// Network output is [mean pre-activation (d), scale pre-activation (d)].
  nn::Net net;
  Encoding encoding;
  double min_variance = 1e-12;
  bool tanh_mean = false;
  /// When set, log_prob rejects actions outside the box instead of clipping.
  std::optional<BoxSpace> bounds;

  int action_dim() const { return net.output_dim() / 2; }
  Gaussian distribution(const Vector& state) const;
  /// Maps one column of raw network output to the distribution.
  Gaussian from_output(const Vector& raw) const;
};

using Policy = std::variant<TabularCategoricalPolicy, ParametricCategoricalPolicy, DiagonalGaussianPolicy>;

bool is_categorical(const Policy& policy);
/// Action probabilities at `state` (categorical families only).
Vector categorical_distribution(const Policy& policy, const Vector& state);
/// Log mass (categorical) or log density (Gaussian) of `action`.
double log_prob(const Policy& policy, const Vector& state, const Action& action);
double prob(const Policy& policy, const Vector& state, const Action& action);
Action sample(const Policy& policy, const Vector& state, Rng& rng);
/// Most likely action: argmax for categoricals, the mean for Gaussians.
Action mode(const Policy& policy, const Vector& state);

int sample_categorical(const Vector& probs, Rng& rng);

double gaussian_log_density(const Gaussian& g, const Vector& x);
/// KL(old || new) of two diagonal Gaussians.
double kl_gaussian(const Gaussian& old_dist, const Gaussian& new_dist);

struct DecoupledKl {
  double mean = 0.0;  // KL(old || N(new mean, old cov))
  double cov = 0.0;   // KL(old || N(old mean, new cov))
};

DecoupledKl kl_gaussian_decoupled(const Gaussian& old_dist, const Gaussian& new_dist);

/// Builders used by the runner and tests.
ParametricCategoricalPolicy make_categorical_policy(Encoding encoding, int num_actions,
                                                    const std::vector<int>& hidden, bool layer_norm,
                                                    Rng& rng);
DiagonalGaussianPolicy make_gaussian_policy(Encoding encoding, int action_dim,
                                            const std::vector<int>& hidden, bool layer_norm,
                                            double init_stddev, double min_variance, Rng& rng);

}  // namespace mompo
