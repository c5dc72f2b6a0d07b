// mompo command line: train, sweep, pareto, eval.
#include "mompo/runner.hpp"
#include "mompo/serialize.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

namespace {

using namespace mompo;

Vector parse_reference(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad reference entry '" + item + "'");
    }
  }
  if (values.empty()) throw ConfigError("empty reference point");
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void print_summary(const RunRecord& r) { std::cout << run_summary(r).dump(2) << '\n'; }

int train(const std::string& config_path, std::uint64_t seed, std::string out, const std::string& mode) {
  Json raw = read_json_file(config_path);
  if (!mode.empty()) raw["algorithm"] = mode;
  const ExperimentConfig config = ExperimentConfig::from_json(raw);
  if (out.empty()) out = config.output_dir;
  RunRecord rec = run_training(config, seed, out);
  rec.id = "train_seed" + std::to_string(seed);
  if (!out.empty()) write_run(rec, out);
  print_summary(rec);
  return 0;
}

int sweep(const std::string& config_path, std::string out, int parallel) {
  const ExperimentConfig config = ExperimentConfig::load(config_path);
  if (out.empty()) out = config.output_dir;
  const SweepResult result = run_sweep(config, parallel, out);
  int failed = 0;
  for (const auto& r : result.runs) failed += r.ok ? 0 : 1;
  Json s = pareto_summary(result.pareto);
  s["failed_runs"] = failed;
  std::cout << s.dump(2) << '\n';
  return 0;
}

int pareto(const std::string& runs, const std::string& reference, std::string out) {
  const ParetoSet set = collect_pareto(runs, parse_reference(reference));
  if (out.empty()) out = runs;
  write_pareto(out, set);
  std::cout << pareto_summary(set).dump(2) << '\n';
  return 0;
}

int eval(const std::string& snapshot_path, int episodes, std::uint64_t seed, bool greedy_flag) {
  if (episodes < 1) throw ConfigError("episodes must be >= 1");
  const Json snap = read_json_file(snapshot_path);
  const Policy policy = policy_from_snapshot(snap);
  const Json meta = snap.value("metadata", Json::object());
  if (!meta.contains("env")) throw ConfigError("snapshot metadata has no env");
  const auto env = make_environment(meta["env"]);
  const double discount = meta.value("discount", env->spec().discount);
  const bool greedy = greedy_flag || meta.value("eval_greedy", false);
  Rng rng(seed);
  const EvaluationResult r = evaluate_policy(*env, policy, episodes, discount, rng, greedy);
  Json j;
  j["episodes"] = episodes;
  j["mean_return"] = to_json(r.mean_return);
  j["mean_discounted_return"] = to_json(r.mean_discounted_return);
  j["mean_length"] = r.mean_length;
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-objective MPO toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, mode, runs, reference, snapshot;
  std::uint64_t seed = 0;
  int parallel = 1, episodes = 100;
  bool greedy = false;

  auto* t = app.add_subcommand("train", "train one policy");
  t->add_option("--config", config_path, "experiment config JSON")->required();
  t->add_option("--seed", seed, "random seed");
  t->add_option("--out", out, "output directory");
  t->add_option("--mode", mode, "mo_mpo | scalarized | mo_vmpo")
      ->check(CLI::IsMember({"mo_mpo", "scalarized", "mo_vmpo"}));

  auto* s = app.add_subcommand("sweep", "run every preference setting and seed");
  s->add_option("--config", config_path, "experiment config JSON")->required();
  s->add_option("--out", out, "output directory");
  s->add_option("--parallel", parallel, "concurrent runs")->check(CLI::PositiveNumber);

  auto* p = app.add_subcommand("pareto", "rebuild the Pareto set of finished runs");
  p->add_option("--runs", runs, "directory holding run subdirectories")->required();
  p->add_option("--reference", reference, "reference point, comma separated")->required();
  p->add_option("--out", out, "where to write pareto.csv and summary.json (default: --runs)");

  auto* e = app.add_subcommand("eval", "evaluate a policy snapshot");
  e->add_option("--snapshot", snapshot, "policy.json")->required();
  e->add_option("--episodes", episodes, "episodes");
  e->add_option("--seed", seed, "random seed");
  e->add_flag("--greedy", greedy, "act with the mode of the policy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*t) return train(config_path, seed, out, mode);
    if (*s) return sweep(config_path, out, parallel);
    if (*p) return pareto(runs, reference, out);
    if (*e) return eval(snapshot, episodes, seed, greedy);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return 2;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << '\n';
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
