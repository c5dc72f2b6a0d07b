#include "mompo/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>

namespace mompo {

bool dominates(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ConfigError("dominates: length mismatch");
  return (a.array() >= b.array()).all() && (a.array() > b.array()).any();
}

std::vector<int> pareto_indices(const std::vector<Vector>& points) {
  std::vector<int> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool keep = true;
    for (std::size_t j = 0; j < points.size() && keep; ++j) {
      if (i == j) continue;
      if (dominates(points[j], points[i])) keep = false;
      else if (j < i && points[j] == points[i]) keep = false;
    }
    if (keep) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<Vector> pareto_filter(const std::vector<Vector>& points) {
  std::vector<Vector> out;
  for (const int i : pareto_indices(points)) out.push_back(points[static_cast<std::size_t>(i)]);
  return out;
}

namespace {

// Points are assumed to strictly dominate the reference.
double hv2(std::vector<Vector> pts, double rx, double ry) {
  std::sort(pts.begin(), pts.end(), [](const Vector& a, const Vector& b) { return a(0) > b(0); });
  double area = 0.0;
  double y_prev = ry;
  for (const auto& p : pts) {
    if (p(1) > y_prev) {
      area += (p(0) - rx) * (p(1) - y_prev);
      y_prev = p(1);
    }
  }
  return area;
}

double hv3(std::vector<Vector> pts, const Vector& ref) {
  std::sort(pts.begin(), pts.end(), [](const Vector& a, const Vector& b) { return a(2) > b(2); });
  double volume = 0.0;
  std::vector<Vector> slice;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    slice.push_back(pts[i].head(2));
    const double z_hi = pts[i](2);
    const double z_lo = i + 1 < pts.size() ? pts[i + 1](2) : ref(2);
    if (z_hi > z_lo) volume += hv2(slice, ref(0), ref(1)) * (z_hi - z_lo);
  }
  return volume;
}

}  // namespace

double hypervolume_monte_carlo(const std::vector<Vector>& points, const Vector& reference, std::size_t samples,
                               Rng& rng) {
  if (points.empty() || samples == 0) return 0.0;
  Vector upper = reference;
  for (const auto& p : points) upper = upper.cwiseMax(p);
  const Vector span = upper - reference;
  if ((span.array() <= 0.0).any()) return 0.0;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::size_t hits = 0;
  Vector x(reference.size());
  for (std::size_t s = 0; s < samples; ++s) {
    for (Eigen::Index d = 0; d < x.size(); ++d) x(d) = reference(d) + span(d) * unif(rng);
    for (const auto& p : points)
      if ((p.array() >= x.array()).all()) {
        ++hits;
        break;
      }
  }
  return span.prod() * static_cast<double>(hits) / static_cast<double>(samples);
}

HypervolumeReport hypervolume_report(const std::vector<Vector>& points, const Vector& reference,
                                     std::size_t samples, std::uint64_t seed) {
  HypervolumeReport r;
  std::vector<Vector> kept;
  for (const auto& p : points) {
    if (p.size() != reference.size()) throw ConfigError("hypervolume: point/reference length mismatch");
    if ((p.array() > reference.array()).all()) kept.push_back(p);
    else ++r.dropped;
  }
  if (kept.empty()) return r;
  kept = pareto_filter(kept);
  switch (reference.size()) {
    case 1: {
      double best = kept.front()(0);
      for (const auto& p : kept) best = std::max(best, p(0));
      r.value = best - reference(0);
      break;
    }
    case 2:
      r.value = hv2(kept, reference(0), reference(1));
      break;
    case 3:
      r.value = hv3(kept, reference);
      break;
    default: {
      Rng rng(seed);
      r.value = hypervolume_monte_carlo(kept, reference, samples, rng);
    }
  }
  return r;
}

double hypervolume(const std::vector<Vector>& points, const Vector& reference) {
  const HypervolumeReport r = hypervolume_report(points, reference);
  if (r.dropped > 0)
    std::cerr << "warning: hypervolume ignored " << r.dropped << " point(s) not dominating the reference\n";
  return r.value;
}

void ParetoSet::add(std::string id, Vector returns) {
  entries.push_back({std::move(id), std::move(returns), false});
}

std::vector<Vector> ParetoSet::points() const {
  std::vector<Vector> pts;
  pts.reserve(entries.size());
  for (const auto& e : entries) pts.push_back(e.returns);
  return pts;
}

void ParetoSet::update() {
  const auto pts = points();
  for (auto& e : entries) e.nondominated = false;
  // Duplicates of a nondominated point share the flag.
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j)
      if (j != i && dominates(pts[j], pts[i])) dominated = true;
    entries[i].nondominated = !dominated;
  }
}

double ParetoSet::hypervolume() const { return mompo::hypervolume(points(), reference); }

void write_pareto_csv(const std::string& path, const ParetoSet& set) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out.precision(17);
  const Eigen::Index n = set.entries.empty() ? set.reference.size() : set.entries.front().returns.size();
  out << "id";
  for (Eigen::Index k = 0; k < n; ++k) out << ",return_" << k;
  out << ",nondominated\n";
  for (const auto& e : set.entries) {
    out << e.id;
    for (Eigen::Index k = 0; k < e.returns.size(); ++k) out << ',' << e.returns(k);
    out << ',' << (e.nondominated ? 1 : 0) << '\n';
  }
}

nlohmann::json pareto_summary(const ParetoSet& set) {
  nlohmann::json j;
  std::vector<double> ref(set.reference.data(), set.reference.data() + set.reference.size());
  j["reference"] = ref;
  int nd = 0;
  for (const auto& e : set.entries) nd += e.nondominated ? 1 : 0;
  j["num_policies"] = set.entries.size();
  j["num_nondominated"] = nd;
  if (set.reference.size() > 0 && !set.entries.empty()) {
    const HypervolumeReport r = hypervolume_report(set.points(), set.reference);
    j["hypervolume"] = r.value;
    j["dropped_points"] = r.dropped;
  } else {
    j["hypervolume"] = nullptr;
  }
  return j;
}

}  // namespace mompo
