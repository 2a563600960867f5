#pragma once
// Hand-rolled random panel generators for property tests.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ddiag/panel.hpp"

namespace testgen {

struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng); }
  double uniform(double a = 0.0, double b = 1.0) { return std::uniform_real_distribution<double>(a, b)(eng); }
  int integer(int a, int b) { return std::uniform_int_distribution<int>(a, b)(eng); }
  bool coin(double p) { return uniform() < p; }
};

struct PanelShape {
  int n = 100, T = 2, k = 1, l = 0;
  int groups = 1;             // treated cohorts, placed at periods 2..T
  bool weights = false;       // random sampling weights
  bool with_outcome = true;
};

// Balanced panel with selection on covariates. Every cohort and the
// never-treated group get at least two units.
inline ddiag::PanelDataset random_panel(Rng& r, const PanelShape& s) {
  ddiag::PanelParts p;
  for (int t = 1; t <= s.T; ++t) p.periods.push_back(2000 + t);
  std::vector<int> cohorts;
  {
    std::vector<int> all;
    for (int g = 2; g <= s.T; ++g) all.push_back(g);
    std::shuffle(all.begin(), all.end(), r.eng);
    for (int q = 0; q < s.groups && q < static_cast<int>(all.size()); ++q) cohorts.push_back(all[q]);
    std::sort(cohorts.begin(), cohorts.end());
  }
  cohorts.push_back(s.T + 1);
  const int ng = static_cast<int>(cohorts.size());
  Eigen::MatrixXd y(s.n, s.T);
  p.tv.assign(static_cast<std::size_t>(s.k), Eigen::MatrixXd(s.n, s.T));
  p.ti.resize(s.n, s.l);
  p.weight.resize(s.n);
  Eigen::VectorXd slope(s.k);
  for (int j = 0; j < s.k; ++j) slope(j) = r.normal();
  for (int i = 0; i < s.n; ++i) {
    const double latent = r.normal();
    for (int j = 0; j < s.k; ++j) {
      double level = latent * 0.5 + r.normal();
      for (int t = 0; t < s.T; ++t) {
        level += 0.3 * r.normal();
        p.tv[static_cast<std::size_t>(j)](i, t) = level;
      }
    }
    for (int j = 0; j < s.l; ++j) p.ti(i, j) = (j % 2 == 0) ? latent + r.normal() : (r.coin(0.5) ? 1.0 : 0.0);
    int g;
    if (i < 2 * ng)
      g = cohorts[static_cast<std::size_t>(i % ng)];
    else {
      const double u = 1.0 / (1.0 + std::exp(-latent));
      const int q = std::clamp(static_cast<int>(std::floor(u * ng + 0.5 * r.normal())), 0, ng - 1);
      g = cohorts[static_cast<std::size_t>(q)];
    }
    p.group.push_back(g);
    const double fe = latent + r.normal();
    for (int t = 0; t < s.T; ++t) {
      double v = fe + 0.5 * t + r.normal();
      for (int j = 0; j < s.k; ++j) v += slope(j) * p.tv[static_cast<std::size_t>(j)](i, t) * (1.0 + 0.2 * t);
      if (t + 1 >= g) v += 1.0 + 0.5 * latent + 0.2 * (t + 1 - g);
      y(i, t) = v;
    }
    p.weight(i) = s.weights ? r.uniform(0.2, 3.0) : 1.0;
    std::string id = std::to_string(i);
    p.unit_ids.push_back("u" + std::string(5 - std::min<std::size_t>(5, id.size()), '0') + id);
  }
  for (int j = 0; j < s.k; ++j) p.tv_names.push_back("x" + std::to_string(j + 1));
  for (int j = 0; j < s.l; ++j) p.ti_names.push_back("z" + std::to_string(j + 1));
  if (s.with_outcome) p.outcome = y;
  return ddiag::PanelDataset(std::move(p));
}

inline PanelShape random_two_period_shape(Rng& r) {
  PanelShape s;
  s.n = r.integer(20, 500);
  s.k = r.integer(0, 4);
  s.l = r.integer(0, 2);
  s.T = 2;
  s.groups = 1;
  s.weights = r.coin(0.5);
  return s;
}

inline PanelShape random_staggered_shape(Rng& r) {
  PanelShape s;
  s.T = r.integer(3, 6);
  s.groups = r.integer(1, std::min(4, s.T - 1));
  s.n = r.integer(60, 400);
  s.k = r.integer(0, 3);
  s.l = r.integer(0, 1);
  s.weights = r.coin(0.5);
  return s;
}

// Duplicates every unit (ids suffixed) so replication invariance can be checked.
inline ddiag::PanelDataset duplicate(const ddiag::PanelDataset& d) {
  std::vector<int> rows;
  for (int rep = 0; rep < 2; ++rep)
    for (int i = 0; i < d.n(); ++i) rows.push_back(i);
  return ddiag::select_units(d, rows, true);
}

}  // namespace testgen
