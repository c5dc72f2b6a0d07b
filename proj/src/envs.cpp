#include "mompo/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>

namespace mompo {

namespace {

Matrix matrix_from_json(const nlohmann::json& rows) {
  if (!rows.is_array() || rows.empty()) throw ConfigError("reward table must be a non-empty array");
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows.front().size());
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != c) throw ConfigError("ragged reward table");
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
  }
  return m;
}

}  // namespace

// --- SimpleWorld -------------------------------------------------------------

Matrix SimpleWorld::default_rewards() {
  Matrix r(3, 2);
  r << 3.0, 3.0,  // up
      4.0, 1.0,   // right
      1.0, 4.0;   // left
  return r;
}

SimpleWorld::SimpleWorld(double scale, Matrix rewards) : scale_(scale), rewards_(std::move(rewards)) {
  if (rewards_.rows() < 1 || rewards_.cols() < 1) throw ConfigError("SimpleWorld: empty reward table");
  if (!rewards_.allFinite() || !std::isfinite(scale_)) throw ConfigError("SimpleWorld: non-finite rewards");
}

EnvSpec SimpleWorld::spec() const {
  EnvSpec s;
  s.state_dim = 1;
  s.action_space = DiscreteSpace{static_cast<int>(rewards_.rows())};
  s.num_objectives = static_cast<int>(rewards_.cols());
  s.discount = 0.0;
  s.max_episode_steps = 1;
  return s;
}

Vector SimpleWorld::reset(Rng&) { return Vector::Zero(1); }

RewardVector SimpleWorld::reward(int action) const {
  if (action < 0 || action >= rewards_.rows()) throw ConfigError("SimpleWorld: invalid action index");
  RewardVector r = rewards_.row(action).transpose();
  r(0) *= scale_;
  return r;
}

Matrix SimpleWorld::scaled_rewards() const {
  Matrix r = rewards_;
  r.col(0) *= scale_;
  return r;
}

StepResult SimpleWorld::step(const Action& action) {
  return {Vector::Zero(1), reward(discrete_action(action)), true, false};
}

nlohmann::json SimpleWorld::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < rewards_.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < rewards_.cols(); ++j) row.push_back(rewards_(i, j));
    rows.push_back(row);
  }
  return {{"type", "simple_world"}, {"scale", scale_}, {"rewards", rows}};
}

// --- DeepSeaTreasure ---------------------------------------------------------

DeepSeaTreasure::Layout DeepSeaTreasure::canonical_layout() {
  constexpr int kRows = 11;
  constexpr int kCols = 10;
  constexpr std::array<int, kCols> depth{1, 2, 3, 4, 4, 4, 7, 7, 9, 10};
  constexpr std::array<double, kCols> value{0.7, 8.2, 11.5, 14.0, 15.1, 16.1, 19.6, 20.3, 22.4, 23.7};
  Layout layout;
  layout.grid.assign(kRows, std::string(kCols, '.'));
  for (int c = 0; c < kCols; ++c) {
    layout.grid[depth[c]][c] = 'T';
    for (int r = depth[c] + 1; r < kRows; ++r) layout.grid[r][c] = '#';
    layout.treasures.push_back({depth[c], c, value[c]});
  }
  return layout;
}

DeepSeaTreasure::DeepSeaTreasure(Layout layout, bool require_monotone_values)
    : layout_(std::move(layout)) {
  if (layout_.grid.empty() || layout_.grid.front().empty()) throw ConfigError("DST: empty grid");
  for (const auto& row : layout_.grid) {
    if (row.size() != layout_.grid.front().size()) throw ConfigError("DST: ragged grid rows");
    for (char ch : row)
      if (ch != '.' && ch != '#' && ch != 'T') throw ConfigError(std::string("DST: bad grid cell '") + ch + "'");
  }
  if (layout_.max_steps < 1) throw ConfigError("DST: max_steps must be >= 1");
  auto inside = [&](int r, int c) { return r >= 0 && r < rows() && c >= 0 && c < cols(); };
  if (!inside(layout_.start_row, layout_.start_col) || blocked(layout_.start_row, layout_.start_col))
    throw ConfigError("DST: start cell is blocked or outside the grid");
  int marked = 0;
  for (const auto& row : layout_.grid) marked += static_cast<int>(std::count(row.begin(), row.end(), 'T'));
  if (marked != static_cast<int>(layout_.treasures.size()))
    throw ConfigError("DST: treasure list does not match 'T' cells in the grid");
  for (std::size_t i = 0; i < layout_.treasures.size(); ++i) {
    const auto& t = layout_.treasures[i];
    if (!inside(t.row, t.col) || layout_.grid[t.row][t.col] != 'T')
      throw ConfigError("DST: treasure " + std::to_string(i) + " is not on a 'T' cell");
    for (std::size_t j = 0; j < i; ++j)
      if (layout_.treasures[j].row == t.row && layout_.treasures[j].col == t.col)
        throw ConfigError("DST: two treasures share a cell");
  }
  if (require_monotone_values) {
    // Values strictly increase with distance from the start.
    const auto dist = treasure_distances();
    std::vector<std::size_t> order(layout_.treasures.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return dist[a] < dist[b]; });
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (layout_.treasures[order[i]].value <= layout_.treasures[order[i - 1]].value)
        throw ConfigError("DST: treasure values must increase with distance");
    }
  }
  row_ = layout_.start_row;
  col_ = layout_.start_col;
}

EnvSpec DeepSeaTreasure::spec() const {
  EnvSpec s;
  s.state_dim = 2;
  s.action_space = DiscreteSpace{4};
  s.num_objectives = 2;
  s.discount = 0.999;
  s.max_episode_steps = layout_.max_steps;
  return s;
}

bool DeepSeaTreasure::blocked(int row, int col) const { return layout_.grid[row][col] == '#'; }

int DeepSeaTreasure::treasure_at(int row, int col) const {
  for (std::size_t i = 0; i < layout_.treasures.size(); ++i)
    if (layout_.treasures[i].row == row && layout_.treasures[i].col == col) return static_cast<int>(i);
  return -1;
}

std::vector<int> DeepSeaTreasure::treasure_distances() const {
  // Breadth-first search; treasure cells end the episode and are not expanded.
  std::vector<int> dist(static_cast<std::size_t>(rows() * cols()), -1);
  std::queue<std::pair<int, int>> frontier;
  dist[layout_.start_row * cols() + layout_.start_col] = 0;
  frontier.emplace(layout_.start_row, layout_.start_col);
  constexpr std::array<std::array<int, 2>, 4> moves{{{-1, 0}, {0, 1}, {1, 0}, {0, -1}}};
  while (!frontier.empty()) {
    const auto [r, c] = frontier.front();
    frontier.pop();
    if (treasure_at(r, c) >= 0 && !(r == layout_.start_row && c == layout_.start_col)) continue;
    for (const auto& m : moves) {
      const int nr = r + m[0];
      const int nc = c + m[1];
      if (nr < 0 || nr >= rows() || nc < 0 || nc >= cols() || blocked(nr, nc)) continue;
      if (dist[nr * cols() + nc] >= 0) continue;
      dist[nr * cols() + nc] = dist[r * cols() + c] + 1;
      frontier.emplace(nr, nc);
    }
  }
  std::vector<int> out;
  out.reserve(layout_.treasures.size());
  for (const auto& t : layout_.treasures) out.push_back(dist[t.row * cols() + t.col]);
  return out;
}

Vector DeepSeaTreasure::reset(Rng&) {
  row_ = layout_.start_row;
  col_ = layout_.start_col;
  steps_ = 0;
  return position();
}

StepResult DeepSeaTreasure::step(const Action& action) {
  const int a = discrete_action(action);
  if (a < 0 || a > 3) throw ConfigError("DST: invalid action index " + std::to_string(a));
  constexpr std::array<std::array<int, 2>, 4> moves{{{-1, 0}, {0, 1}, {1, 0}, {0, -1}}};
  const int nr = row_ + moves[a][0];
  const int nc = col_ + moves[a][1];
  // Moves into the sea floor or off the grid have no effect.
  if (nr >= 0 && nr < rows() && nc >= 0 && nc < cols() && !blocked(nr, nc)) {
    row_ = nr;
    col_ = nc;
  }
  ++steps_;
  StepResult out;
  out.next_state = position();
  out.rewards = RewardVector{{-1.0, 0.0}};
  const int t = treasure_at(row_, col_);
  if (t >= 0) {
    out.rewards(1) = layout_.treasures[t].value;
    out.terminal = true;
  } else if (steps_ >= layout_.max_steps) {
    out.truncated = true;
  }
  return out;
}

nlohmann::json DeepSeaTreasure::to_json() const {
  nlohmann::json treasures = nlohmann::json::array();
  for (const auto& t : layout_.treasures) treasures.push_back({{"row", t.row}, {"col", t.col}, {"value", t.value}});
  return {{"type", "deep_sea_treasure"},
          {"grid", layout_.grid},
          {"treasures", treasures},
          {"start", {layout_.start_row, layout_.start_col}},
          {"max_steps", layout_.max_steps}};
}

std::vector<FrontPoint> true_pareto_front(const DeepSeaTreasure& env) {
  const auto dist = env.treasure_distances();
  const auto& treasures = env.layout().treasures;
  std::vector<FrontPoint> candidates;
  for (std::size_t i = 0; i < treasures.size(); ++i) {
    if (dist[i] < 0)
      throw ConfigError("treasure at (" + std::to_string(treasures[i].row) + ", " +
                        std::to_string(treasures[i].col) + ") is unreachable");
    candidates.push_back({treasures[i].value, -static_cast<double>(dist[i])});
  }
  std::vector<FrontPoint> front;
  for (const auto& p : candidates) {
    bool dominated = false;
    for (const auto& q : candidates) {
      if (q.treasure >= p.treasure && q.time_return >= p.time_return &&
          (q.treasure > p.treasure || q.time_return > p.time_return)) {
        dominated = true;
        break;
      }
    }
    if (!dominated) front.push_back(p);
  }
  std::sort(front.begin(), front.end(), [](const auto& a, const auto& b) { return a.treasure < b.treasure; });
  return front;
}

// --- PointMassRun ------------------------------------------------------------

double Environment::action_reward(int k, const Action&) const {
  throw ConfigError(name() + ": objective " + std::to_string(k) + " has no action-only reward");
}

PointMassRun::PointMassRun(Params params) : params_(params) {
  if (!(params_.target_speed > 0.0)) throw ConfigError("PointMassRun: target_speed must be positive");
  if (params_.horizon < 1) throw ConfigError("PointMassRun: horizon must be >= 1");
  if (!(std::abs(params_.damping) < 1.0)) throw ConfigError("PointMassRun: |damping| must be < 1");
  velocity_ = params_.initial_velocity;
}

EnvSpec PointMassRun::spec() const {
  EnvSpec s;
  s.state_dim = 1;
  s.action_space = BoxSpace{Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)};
  s.num_objectives = 2;
  s.discount = 0.99;
  s.max_episode_steps = params_.horizon;
  return s;
}

Vector PointMassRun::reset(Rng&) {
  velocity_ = params_.initial_velocity;
  steps_ = 0;
  return Vector::Constant(1, velocity_);
}

double PointMassRun::action_penalty(const Vector& action) {
  return -action.cwiseMax(-1.0).cwiseMin(1.0).norm();
}

double PointMassRun::action_reward(int k, const Action& action) const {
  if (k != 1) return Environment::action_reward(k, action);
  return action_penalty(continuous_action(action));
}

StepResult PointMassRun::step(const Action& action) {
  const Vector& a = continuous_action(action);
  if (a.size() != 1 || !a.allFinite()) throw ConfigError("PointMassRun: invalid action");
  const double applied = std::clamp(a(0), -1.0, 1.0);
  velocity_ = params_.damping * velocity_ + params_.gain * applied;
  ++steps_;
  StepResult out;
  out.next_state = Vector::Constant(1, velocity_);
  out.rewards = RewardVector{{std::min(velocity_ / params_.target_speed, 1.0), action_penalty(a)}};
  out.truncated = steps_ >= params_.horizon;
  return out;
}

nlohmann::json PointMassRun::to_json() const {
  return {{"type", "point_mass_run"},
          {"target_speed", params_.target_speed},
          {"horizon", params_.horizon},
          {"damping", params_.damping},
          {"gain", params_.gain},
          {"initial_velocity", params_.initial_velocity}};
}

// --- factory / evaluation ----------------------------------------------------

std::unique_ptr<Environment> make_environment(const nlohmann::json& config) {
  try {
    const std::string type = config.at("type").get<std::string>();
    if (type == "simple_world") {
      const double scale = config.value("scale", 1.0);
      Matrix rewards = config.contains("rewards") ? matrix_from_json(config["rewards"]) : SimpleWorld::default_rewards();
      return std::make_unique<SimpleWorld>(scale, std::move(rewards));
    }
    if (type == "deep_sea_treasure") {
      DeepSeaTreasure::Layout layout = DeepSeaTreasure::canonical_layout();
      if (config.contains("grid")) {
        layout.grid = config["grid"].get<std::vector<std::string>>();
        layout.treasures.clear();
        for (const auto& t : config.at("treasures"))
          layout.treasures.push_back({t.at("row").get<int>(), t.at("col").get<int>(), t.at("value").get<double>()});
      } else if (config.contains("treasure_values")) {
        const auto values = config["treasure_values"].get<std::vector<double>>();
        if (values.size() != layout.treasures.size()) throw ConfigError("DST: need one value per treasure");
        for (std::size_t i = 0; i < values.size(); ++i) layout.treasures[i].value = values[i];
      }
      if (config.contains("start")) {
        layout.start_row = config["start"].at(0).get<int>();
        layout.start_col = config["start"].at(1).get<int>();
      }
      layout.max_steps = config.value("max_steps", layout.max_steps);
      return std::make_unique<DeepSeaTreasure>(std::move(layout), config.value("require_monotone_values", true));
    }
    if (type == "point_mass_run") {
      PointMassRun::Params p;
      p.target_speed = config.value("target_speed", p.target_speed);
      p.horizon = config.value("horizon", p.horizon);
      p.damping = config.value("damping", p.damping);
      p.gain = config.value("gain", p.gain);
      p.initial_velocity = config.value("initial_velocity", p.initial_velocity);
      return std::make_unique<PointMassRun>(p);
    }
    throw ConfigError("unknown environment type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("environment config: ") + e.what());
  }
}

EvaluationResult evaluate_policy(const Environment& env, const ActionFn& act, int episodes,
                                 double discount, Rng& rng) {
  if (episodes < 1) throw ConfigError("evaluate_policy: episodes must be >= 1");
  auto sim = env.clone();
  const int n = env.spec().num_objectives;
  EvaluationResult out{Vector::Zero(n), Vector::Zero(n), 0.0};
  const int limit = env.spec().max_episode_steps;
  for (int e = 0; e < episodes; ++e) {
    Vector state = sim->reset(rng);
    double scale = 1.0;
    for (int t = 0; t < limit; ++t) {
      const StepResult step = sim->step(act(state, rng));
      out.mean_return += step.rewards;
      out.mean_discounted_return += scale * step.rewards;
      scale *= discount;
      out.mean_length += 1.0;
      if (step.terminal || step.truncated) break;
      state = step.next_state;
    }
  }
  out.mean_return /= episodes;
  out.mean_discounted_return /= episodes;
  out.mean_length /= episodes;
  return out;
}

EvaluationResult evaluate_policy(const Environment& env, const Policy& policy, int episodes,
                                 double discount, Rng& rng, bool greedy) {
  ActionFn act = [&policy, greedy](const Vector& s, Rng& r) {
    return greedy ? mode(policy, s) : sample(policy, s, r);
  };
  return evaluate_policy(env, act, episodes, discount, rng);
}

}  // namespace mompo
