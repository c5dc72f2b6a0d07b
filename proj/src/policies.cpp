#include "mompo/policies.hpp"

#include <numbers>
#include <string>

namespace mompo {

int Encoding::num_states() const {
  if (kind != Kind::one_hot_grid) throw ConfigError("identity encoding has no finite state count");
  return rows * cols;
}

int Encoding::index(const Vector& state) const {
  if (kind != Kind::one_hot_grid) throw ConfigError("identity encoding cannot index states");
  int row = 0;
  int col = 0;
  if (state.size() == 2) {
    row = static_cast<int>(std::lround(state(0)));
    col = static_cast<int>(std::lround(state(1)));
  } else if (state.size() == 1 && rows * cols == 1) {
    row = 0;
    col = 0;
  } else {
    throw ConfigError("grid encoding expects (row, col) states");
  }
  if (row < 0 || row >= rows || col < 0 || col >= cols)
    throw ConfigError("state (" + std::to_string(row) + ", " + std::to_string(col) + ") outside grid");
  return row * cols + col;
}

Vector Encoding::features(const Vector& state) const {
  if (kind == Kind::identity) {
    if (state.size() != state_dim) throw ConfigError("state has wrong dimension for encoding");
    return state;
  }
  Vector f = Vector::Zero(rows * cols);
  f(index(state)) = 1.0;
  return f;
}

Matrix Encoding::features(const std::vector<Vector>& states) const {
  Matrix out(feature_dim(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = features(states[i]);
  return out;
}

TabularCategoricalPolicy TabularCategoricalPolicy::uniform(int num_states, int num_actions,
                                                           Encoding encoding) {
  TabularCategoricalPolicy p;
  p.probs = Matrix::Constant(num_states, num_actions, 1.0 / num_actions);
  p.encoding = encoding;
  return p;
}

Vector TabularCategoricalPolicy::distribution(const Vector& state) const {
  return probs.row(encoding.index(state)).transpose();
}

void TabularCategoricalPolicy::validate() const {
  if ((probs.array() < 0.0).any()) throw ConfigError("tabular policy has negative probabilities");
  for (Eigen::Index s = 0; s < probs.rows(); ++s)
    if (std::abs(probs.row(s).sum() - 1.0) > 1e-9)
      throw ConfigError("tabular policy row " + std::to_string(s) + " does not sum to 1");
}

Vector ParametricCategoricalPolicy::logits(const Vector& state) const {
  const Vector out = net.forward(encoding.features(state));
  if (!out.allFinite()) throw NumericalError("policy produced non-finite logits");
  return out;
}

Vector ParametricCategoricalPolicy::distribution(const Vector& state) const {
  return softmax(logits(state));
}

Gaussian DiagonalGaussianPolicy::from_output(const Vector& raw) const {
  const int d = action_dim();
  Gaussian g;
  g.mean = raw.head(d);
  if (tanh_mean) g.mean = g.mean.array().tanh().matrix();
  const double floor = std::sqrt(min_variance);
  g.stddev = raw.tail(d).unaryExpr([floor](double x) { return softplus(x) + floor; });
  return g;
}

Gaussian DiagonalGaussianPolicy::distribution(const Vector& state) const {
  const Vector raw = net.forward(encoding.features(state));
  if (!raw.allFinite()) throw NumericalError("policy produced non-finite output");
  return from_output(raw);
}

bool is_categorical(const Policy& policy) {
  return !std::holds_alternative<DiagonalGaussianPolicy>(policy);
}

Vector categorical_distribution(const Policy& policy, const Vector& state) {
  if (const auto* t = std::get_if<TabularCategoricalPolicy>(&policy)) return t->distribution(state);
  if (const auto* p = std::get_if<ParametricCategoricalPolicy>(&policy)) return p->distribution(state);
  throw ConfigError("categorical_distribution called on a Gaussian policy");
}

double gaussian_log_density(const Gaussian& g, const Vector& x) {
  if (x.size() != g.mean.size()) throw ConfigError("action dimension mismatch");
  const auto z = ((x - g.mean).array() / g.stddev.array());
  return -0.5 * z.square().sum() - g.stddev.array().log().sum() -
         0.5 * static_cast<double>(g.dim()) * std::log(2.0 * std::numbers::pi);
}

double log_prob(const Policy& policy, const Vector& state, const Action& action) {
  if (const auto* g = std::get_if<DiagonalGaussianPolicy>(&policy)) {
    const Vector& a = continuous_action(action);
    if (g->bounds && !g->bounds->contains(a)) throw ConfigError("action outside box bounds");
    return gaussian_log_density(g->distribution(state), a);
  }
  const int a = discrete_action(action);
  if (const auto* p = std::get_if<ParametricCategoricalPolicy>(&policy)) {
    if (a < 0 || a >= p->num_actions()) throw ConfigError("action index out of range");
    return log_softmax(p->logits(state))(a);
  }
  const Vector probs = categorical_distribution(policy, state);
  if (a < 0 || a >= probs.size()) throw ConfigError("action index out of range");
  return std::log(probs(a));
}

double prob(const Policy& policy, const Vector& state, const Action& action) {
  return std::exp(log_prob(policy, state, action));
}

int sample_categorical(const Vector& probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng) * probs.sum();
  double acc = 0.0;
  int last_positive = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

Action sample(const Policy& policy, const Vector& state, Rng& rng) {
  if (const auto* g = std::get_if<DiagonalGaussianPolicy>(&policy)) {
    const Gaussian dist = g->distribution(state);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector a(dist.dim());
    for (int i = 0; i < dist.dim(); ++i) a(i) = dist.mean(i) + dist.stddev(i) * normal(rng);
    return a;
  }
  return sample_categorical(categorical_distribution(policy, state), rng);
}

Action mode(const Policy& policy, const Vector& state) {
  if (const auto* g = std::get_if<DiagonalGaussianPolicy>(&policy)) return g->distribution(state).mean;
  Eigen::Index best = 0;
  categorical_distribution(policy, state).maxCoeff(&best);
  return static_cast<int>(best);
}

double kl_gaussian(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim()) throw ConfigError("kl_gaussian: dimension mismatch");
  const auto vp = p.stddev.array().square();
  const auto vq = q.stddev.array().square();
  const double kl = ((q.stddev.array() / p.stddev.array()).log() +
                     (vp + (p.mean - q.mean).array().square()) / (2.0 * vq) - 0.5)
                        .sum();
  return kl < 0.0 ? 0.0 : kl;
}

DecoupledKl kl_gaussian_decoupled(const Gaussian& old_dist, const Gaussian& new_dist) {
  if (old_dist.dim() != new_dist.dim()) throw ConfigError("kl_gaussian_decoupled: dimension mismatch");
  DecoupledKl out;
  out.mean = ((old_dist.mean - new_dist.mean).array().square() /
              (2.0 * old_dist.stddev.array().square()))
                 .sum();
  const auto ratio = new_dist.stddev.array() / old_dist.stddev.array();
  out.cov = (ratio.log() + 0.5 / ratio.square() - 0.5).sum();
  if (out.cov < 0.0) out.cov = 0.0;
  return out;
}

ParametricCategoricalPolicy make_categorical_policy(Encoding encoding, int num_actions,
                                                    const std::vector<int>& hidden, bool layer_norm,
                                                    Rng& rng) {
  std::vector<int> sizes{encoding.feature_dim()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(num_actions);
  ParametricCategoricalPolicy p{nn::Net(sizes, layer_norm && !hidden.empty()), encoding};
  p.net.init_uniform(rng);
  // Uniform initial policy.
  p.net.scale_output_layer(0.0);
  return p;
}

DiagonalGaussianPolicy make_gaussian_policy(Encoding encoding, int action_dim,
                                            const std::vector<int>& hidden, bool layer_norm,
                                            double init_stddev, double min_variance, Rng& rng) {
  std::vector<int> sizes{encoding.feature_dim()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * action_dim);
  DiagonalGaussianPolicy p;
  p.net = nn::Net(sizes, layer_norm && !hidden.empty());
  p.encoding = encoding;
  p.min_variance = min_variance;
  p.net.init_uniform(rng);
  p.net.scale_output_layer(0.0);
  const double raw = softplus_inverse(init_stddev - std::sqrt(min_variance));
  p.net.bias(p.net.num_layers() - 1).tail(action_dim).setConstant(raw);
  return p;
}

}  // namespace mompo
