#include "mompo/serialize.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace mompo {

namespace {

template <typename F>
auto guarded(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

Json to_json(const Vector& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

Vector vector_from_json(const Json& j) {
  return guarded("vector", [&]() -> Vector {
    if (j.is_number()) return Vector::Constant(1, j.get<double>());
    const auto values = j.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
  });
}

Json to_json(const Action& a) {
  if (const int* i = std::get_if<int>(&a)) return *i;
  return to_json(std::get<Vector>(a));
}

Action action_from_json(const Json& j) {
  if (j.is_number_integer()) return j.get<int>();
  return vector_from_json(j);
}

Json to_json(const EnvSpec& spec) {
  Json space;
  if (spec.discrete()) {
    space = {{"discrete", spec.num_actions()}};
  } else {
    const auto& box = std::get<BoxSpace>(spec.action_space);
    space = {{"box", {{"dim", box.dim()}, {"lower", to_json(box.lower)}, {"upper", to_json(box.upper)}}}};
  }
  return {{"state_dim", spec.state_dim},
          {"action_space", space},
          {"num_objectives", spec.num_objectives},
          {"discount", spec.discount},
          {"max_episode_steps", spec.max_episode_steps}};
}

EnvSpec env_spec_from_json(const Json& j) {
  return guarded("EnvSpec", [&] {
    EnvSpec s;
    s.state_dim = j.at("state_dim").get<int>();
    const auto& space = j.at("action_space");
    if (space.contains("discrete")) {
      s.action_space = DiscreteSpace{space["discrete"].get<int>()};
    } else {
      const auto& box = space.at("box");
      s.action_space = BoxSpace{vector_from_json(box.at("lower")), vector_from_json(box.at("upper"))};
    }
    s.num_objectives = j.at("num_objectives").get<int>();
    s.discount = j.at("discount").get<double>();
    s.max_episode_steps = j.at("max_episode_steps").get<int>();
    s.validate();
    return s;
  });
}

Json to_json(const Transition& t) {
  return {{"state", to_json(t.state)},
          {"action", to_json(t.action)},
          {"rewards", to_json(t.rewards)},
          {"next_state", to_json(t.next_state)},
          {"behavior_prob", t.behavior_prob},
          {"terminal", t.terminal}};
}

Transition transition_from_json(const Json& j) {
  return guarded("Transition", [&] {
    Transition t;
    t.state = vector_from_json(j.at("state"));
    t.action = action_from_json(j.at("action"));
    t.rewards = vector_from_json(j.at("rewards"));
    t.next_state = vector_from_json(j.at("next_state"));
    t.behavior_prob = j.at("behavior_prob").get<double>();
    t.terminal = j.at("terminal").get<bool>();
    return t;
  });
}

Json to_json(const Trajectory& t) {
  Json transitions = Json::array();
  for (const auto& tr : t.transitions) transitions.push_back(to_json(tr));
  return {{"transitions", transitions},
          {"episode_return", to_json(t.episode_return)},
          {"discounted_return", to_json(t.discounted_return)}};
}

Trajectory trajectory_from_json(const Json& j) {
  return guarded("Trajectory", [&] {
    Trajectory t;
    for (const auto& tr : j.at("transitions")) t.transitions.push_back(transition_from_json(tr));
    t.episode_return = vector_from_json(j.at("episode_return"));
    t.discounted_return = vector_from_json(j.at("discounted_return"));
    return t;
  });
}

Json to_json(const PreferenceSpec& p) {
  return {{"mode", to_string(p.mode)}, {"values", to_json(p.values)}};
}

PreferenceSpec preference_from_json(const Json& j) {
  return guarded("PreferenceSpec", [&] {
    return PreferenceSpec{preference_mode_from_string(j.at("mode").get<std::string>()),
                          vector_from_json(j.at("values"))};
  });
}

void write_transitions(std::ostream& out, const std::vector<Trajectory>& trajectories) {
  for (std::size_t e = 0; e < trajectories.size(); ++e) {
    for (const auto& t : trajectories[e].transitions) {
      Json line = to_json(t);
      line["episode"] = e;
      out << line.dump() << '\n';
    }
  }
}

std::vector<Trajectory> read_transitions(std::istream& in, double discount) {
  std::vector<Trajectory> out;
  std::vector<Transition> current;
  long current_episode = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("transition file line " + std::to_string(line_no) + ": " + e.what());
    }
    const long episode = j.value("episode", current_episode < 0 ? 0L : current_episode);
    if (episode != current_episode && !current.empty()) {
      out.push_back(Trajectory::from_transitions(std::move(current), discount));
      current.clear();
    }
    current_episode = episode;
    current.push_back(transition_from_json(j));
  }
  if (!current.empty()) out.push_back(Trajectory::from_transitions(std::move(current), discount));
  return out;
}

Json to_json(const Encoding& e) {
  if (e.kind == Encoding::Kind::identity) return {{"kind", "identity"}, {"state_dim", e.state_dim}};
  return {{"kind", "one_hot_grid"}, {"rows", e.rows}, {"cols", e.cols}};
}

Encoding encoding_from_json(const Json& j) {
  return guarded("Encoding", [&] {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "identity") return Encoding::identity(j.at("state_dim").get<int>());
    if (kind == "one_hot_grid") return Encoding::grid(j.at("rows").get<int>(), j.at("cols").get<int>());
    throw ConfigError("unknown encoding '" + kind + "'");
  });
}

namespace {

Json net_to_json(const nn::Net& net) {
  return {{"layer_sizes", net.sizes()},
          {"layer_norm_first", net.layer_norm_first()},
          {"parameters", to_json(net.parameters())}};
}

nn::Net net_from_json(const Json& j) {
  nn::Net net(j.at("layer_sizes").get<std::vector<int>>(), j.value("layer_norm_first", false));
  net.set_parameters(vector_from_json(j.at("parameters")));
  return net;
}

}  // namespace

Json policy_snapshot(const Policy& policy, const Json& metadata) {
  Json j;
  if (const auto* t = std::get_if<TabularCategoricalPolicy>(&policy)) {
    Json rows = Json::array();
    for (Eigen::Index s = 0; s < t->probs.rows(); ++s) rows.push_back(to_json(Vector(t->probs.row(s).transpose())));
    j = {{"family", "tabular_categorical"}, {"encoding", to_json(t->encoding)}, {"probs", rows}};
  } else if (const auto* p = std::get_if<ParametricCategoricalPolicy>(&policy)) {
    j = net_to_json(p->net);
    j["family"] = "parametric_categorical";
    j["encoding"] = to_json(p->encoding);
  } else {
    const auto& g = std::get<DiagonalGaussianPolicy>(policy);
    j = net_to_json(g.net);
    j["family"] = "diagonal_gaussian";
    j["encoding"] = to_json(g.encoding);
    j["min_variance"] = g.min_variance;
    j["tanh_mean"] = g.tanh_mean;
    if (g.bounds) j["bounds"] = {{"lower", to_json(g.bounds->lower)}, {"upper", to_json(g.bounds->upper)}};
  }
  j["metadata"] = metadata;
  return j;
}

Policy policy_from_snapshot(const Json& j) {
  return guarded("policy snapshot", [&]() -> Policy {
    const auto family = j.at("family").get<std::string>();
    if (family == "tabular_categorical") {
      const auto& rows = j.at("probs");
      TabularCategoricalPolicy t;
      t.encoding = encoding_from_json(j.at("encoding"));
      t.probs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
      for (std::size_t s = 0; s < rows.size(); ++s)
        t.probs.row(static_cast<Eigen::Index>(s)) = vector_from_json(rows[s]).transpose();
      t.validate();
      return t;
    }
    if (family == "parametric_categorical")
      return ParametricCategoricalPolicy{net_from_json(j), encoding_from_json(j.at("encoding"))};
    if (family == "diagonal_gaussian") {
      DiagonalGaussianPolicy g;
      g.net = net_from_json(j);
      g.encoding = encoding_from_json(j.at("encoding"));
      g.min_variance = j.value("min_variance", 1e-12);
      g.tanh_mean = j.value("tanh_mean", false);
      if (j.contains("bounds"))
        g.bounds = BoxSpace{vector_from_json(j["bounds"].at("lower")), vector_from_json(j["bounds"].at("upper"))};
      return g;
    }
    throw ConfigError("unknown policy family '" + family + "'");
  });
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace mompo
