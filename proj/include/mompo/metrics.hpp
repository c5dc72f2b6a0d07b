#pragma once

// Pareto dominance and hypervolume, maximization convention throughout.

#include "mompo/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace mompo {

/// a >= b elementwise and a > b somewhere.
bool dominates(const Vector& a, const Vector& b);

/// Indices of the nondominated points; of identical points only the first
/// is kept.
std::vector<int> pareto_indices(const std::vector<Vector>& points);
std::vector<Vector> pareto_filter(const std::vector<Vector>& points);

struct HypervolumeReport {
  double value = 0.0;
  /// Points that do not strictly dominate the reference and were ignored.
  int dropped = 0;
};

/// Exact for up to three objectives; Monte Carlo with `samples` draws
/// beyond that.
HypervolumeReport hypervolume_report(const std::vector<Vector>& points, const Vector& reference,
                                     std::size_t samples = 1000000, std::uint64_t seed = 0);
/// Same value; dropped points are reported on stderr.
double hypervolume(const std::vector<Vector>& points, const Vector& reference);
double hypervolume_monte_carlo(const std::vector<Vector>& points, const Vector& reference, std::size_t samples,
                               Rng& rng);

struct ParetoEntry {
  std::string id;
  Vector returns;
  bool nondominated = false;
};

struct ParetoSet {
  std::vector<ParetoEntry> entries;
  Vector reference;

  void add(std::string id, Vector returns);
  /// Recomputes every nondominated flag.
  void update();
  std::vector<Vector> points() const;
  double hypervolume() const;
};

/// id, return_0..return_{N-1}, nondominated
void write_pareto_csv(const std::string& path, const ParetoSet& set);
nlohmann::json pareto_summary(const ParetoSet& set);

}  // namespace mompo
