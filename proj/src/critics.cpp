#include "mompo/critics.hpp"

#include <cmath>
#include <string>

namespace mompo {

Matrix exact_bandit_q(const Environment& env) {
  const auto* bandit = dynamic_cast<const SimpleWorld*>(&env);
  if (bandit == nullptr) throw ConfigError("exact_bandit_q requires a single-state bandit, got " + env.name());
  return bandit->scaled_rewards().transpose();
}

double td0_update(Matrix& q, int state, int action, double reward, double value_of_next, bool terminal,
                  double discount, double lr) {
  if (state < 0 || state >= q.rows() || action < 0 || action >= q.cols())
    throw ConfigError("td0_update: index out of range");
  const double target = reward + (terminal ? 0.0 : discount * value_of_next);
  const double err = target - q(state, action);
  q(state, action) += lr * err;
  return err;
}

TabularCriticBank::TabularCriticBank(int num_objectives, int num_states, int num_actions, double init) {
  if (num_objectives < 1 || num_states < 1 || num_actions < 1) throw ConfigError("TabularCriticBank: bad shape");
  online_.assign(static_cast<std::size_t>(num_objectives), Matrix::Constant(num_states, num_actions, init));
  target_ = online_;
}

void TabularCriticBank::td0(const Encoding& encoding, const Transition& t, const Vector& next_probs,
                            double discount, double lr) {
  const int s = encoding.index(t.state);
  const int a = discrete_action(t.action);
  if (t.rewards.size() != num_objectives()) throw ConfigError("reward vector length does not match critic bank");
  const int s_next = t.terminal ? s : encoding.index(t.next_state);
  for (int k = 0; k < num_objectives(); ++k) {
    Matrix& table = online_[static_cast<std::size_t>(k)];
    const double v_next = t.terminal ? 0.0 : table.row(s_next).dot(next_probs.transpose());
    td0_update(table, s, a, t.rewards(k), v_next, t.terminal, discount, lr);
  }
}

double retrace_trace_coefficient(double pi, double b) {
  if (!(b > 0.0)) throw ConfigError("retrace: behavior probability must be positive");
  if (pi < 0.0) throw ConfigError("retrace: negative target probability");
  return std::min(1.0, pi / b);
}

void RetraceConfig::validate() const {
  if (sequence_length < 1) throw ConfigError("retrace sequence length must be >= 1");
  if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("retrace discount must lie in [0, 1)");
}

Vector retrace_targets(const Vector& rewards, const Vector& q, const Vector& v_next, const Vector& c,
                       const std::vector<bool>& terminal, double discount) {
  const Eigen::Index T = rewards.size();
  if (q.size() != T || v_next.size() != T || c.size() != T || static_cast<Eigen::Index>(terminal.size()) != T)
    throw ConfigError("retrace_targets: length mismatch");
  Vector out(T);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const bool term = terminal[static_cast<std::size_t>(t)];
    double target = rewards(t) + (term ? 0.0 : discount * v_next(t));
    if (!term && t + 1 < T) target += discount * c(t + 1) * (out(t + 1) - q(t + 1));
    out(t) = target;
  }
  if (!out.allFinite()) throw NumericalError("retrace_targets: non-finite target");
  return out;
}

Vector retrace_targets(const std::vector<Transition>& window, int objective, const RetraceModel& model,
                       double discount) {
  const auto T = static_cast<Eigen::Index>(window.size());
  Vector r(T), q(T), v(T), c(T);
  std::vector<bool> term(window.size());
  for (Eigen::Index t = 0; t < T; ++t) {
    const Transition& tr = window[static_cast<std::size_t>(t)];
    if (objective < 0 || objective >= tr.rewards.size()) throw ConfigError("retrace: objective out of range");
    r(t) = tr.rewards(objective);
    q(t) = model.q(tr.state, tr.action);
    term[static_cast<std::size_t>(t)] = tr.terminal;
    v(t) = tr.terminal ? 0.0 : model.v(tr.next_state);
    c(t) = retrace_trace_coefficient(model.pi(tr.state, tr.action), tr.behavior_prob);
  }
  return retrace_targets(r, q, v, c, term, discount);
}

namespace {

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

double mse_step(nn::Net& net, nn::Adam& adam, const Matrix& inputs, const Vector& targets) {
  if (!targets.allFinite()) throw NumericalError("critic fit: non-finite targets");
  const double n = static_cast<double>(targets.size());
  auto [loss, g] = nn::grad(net, inputs, [&](const Matrix& out) {
    const Eigen::RowVectorXd diff = out.row(0) - targets.transpose();
    Matrix d = (2.0 / n) * diff;
    return std::pair<double, Matrix>{diff.squaredNorm() / n, d};
  });
  nn::adam_step(net.parameters(), g, adam);
  return loss;
}

}  // namespace

QNetworkBank::QNetworkBank(int num_objectives, Encoding encoding, int num_actions, int action_dim,
                           const Options& options, Rng& rng)
    : encoding_(encoding), num_actions_(num_actions), action_dim_(num_actions > 0 ? num_actions : action_dim) {
  if (num_objectives < 1) throw ConfigError("QNetworkBank: need at least one objective");
  if (action_dim_ < 1) throw ConfigError("QNetworkBank: action dimension must be positive");
  const auto sizes = layer_sizes(encoding_.feature_dim() + action_dim_, options.hidden, 1);
  for (int k = 0; k < num_objectives; ++k) {
    nn::Net net(sizes, options.layer_norm && !options.hidden.empty());
    net.init_uniform(rng);
    online_.push_back(net);
    adam_.push_back(nn::Adam::make(net.parameter_size(), options.lr, options.adam_epsilon));
  }
  target_ = online_;
}

Vector QNetworkBank::input(const Vector& state, const Action& action) const {
  const Vector f = encoding_.features(state);
  Vector x = Vector::Zero(f.size() + action_dim_);
  x.head(f.size()) = f;
  if (discrete()) {
    const int a = discrete_action(action);
    if (a < 0 || a >= num_actions_) throw ConfigError("QNetworkBank: action index out of range");
    x(f.size() + a) = 1.0;
  } else {
    const Vector& a = continuous_action(action);
    if (a.size() != action_dim_) throw ConfigError("QNetworkBank: action dimension mismatch");
    x.tail(action_dim_) = a;
  }
  return x;
}

double QNetworkBank::q(int k, const Vector& state, const Action& action, bool use_target) const {
  const auto& net = use_target ? target_.at(static_cast<std::size_t>(k)) : online_.at(static_cast<std::size_t>(k));
  return net.forward(input(state, action))(0);
}

Vector QNetworkBank::q_all(int k, const Vector& state, bool use_target) const {
  if (!discrete()) throw ConfigError("q_all requires discrete actions");
  const auto& net = use_target ? target_.at(static_cast<std::size_t>(k)) : online_.at(static_cast<std::size_t>(k));
  const Vector f = encoding_.features(state);
  Matrix x = Matrix::Zero(f.size() + num_actions_, num_actions_);
  for (int a = 0; a < num_actions_; ++a) {
    x.col(a).head(f.size()) = f;
    x(f.size() + a, a) = 1.0;
  }
  return net.forward(x).row(0).transpose();
}

double QNetworkBank::fit_q(int k, const std::vector<Vector>& states, const std::vector<Action>& actions,
                           const Vector& targets) {
  if (states.size() != actions.size() || static_cast<Eigen::Index>(states.size()) != targets.size())
    throw ConfigError("fit_q: batch length mismatch");
  Matrix x(encoding_.feature_dim() + action_dim_, static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = input(states[i], actions[i]);
  const auto kk = static_cast<std::size_t>(k);
  return mse_step(online_.at(kk), adam_.at(kk), x, targets);
}

VNetworkBank::VNetworkBank(int num_objectives, Encoding encoding, const Options& options, Rng& rng)
    : encoding_(encoding) {
  if (num_objectives < 1) throw ConfigError("VNetworkBank: need at least one objective");
  const auto sizes = layer_sizes(encoding_.feature_dim(), options.hidden, 1);
  for (int k = 0; k < num_objectives; ++k) {
    nn::Net net(sizes, options.layer_norm && !options.hidden.empty());
    net.init_uniform(rng);
    online_.push_back(net);
    adam_.push_back(nn::Adam::make(net.parameter_size(), options.lr, options.adam_epsilon));
  }
  target_ = online_;
}

double VNetworkBank::v(int k, const Vector& state, bool use_target) const {
  const auto& net = use_target ? target_.at(static_cast<std::size_t>(k)) : online_.at(static_cast<std::size_t>(k));
  return net.forward(encoding_.features(state))(0);
}

double VNetworkBank::fit_v(int k, const std::vector<Vector>& states, const Vector& targets) {
  if (static_cast<Eigen::Index>(states.size()) != targets.size()) throw ConfigError("fit_v: batch length mismatch");
  const auto kk = static_cast<std::size_t>(k);
  return mse_step(online_.at(kk), adam_.at(kk), encoding_.features(states), targets);
}

NStepTargets nstep_v_targets(const std::vector<Transition>& segment, int objective,
                             const std::function<double(const Vector&)>& value, double discount) {
  if (segment.empty()) throw ConfigError("nstep_v_targets: empty segment");
  const auto T = static_cast<Eigen::Index>(segment.size());
  NStepTargets out{Vector(T), Vector(T)};
  const Transition& last = segment.back();
  double g = last.terminal ? 0.0 : value(last.next_state);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const Transition& tr = segment[static_cast<std::size_t>(t)];
    if (objective < 0 || objective >= tr.rewards.size()) throw ConfigError("nstep_v_targets: objective out of range");
    g = tr.rewards(objective) + discount * g;
    out.targets(t) = g;
    out.advantages(t) = g - value(tr.state);
  }
  return out;
}

}  // namespace mompo
