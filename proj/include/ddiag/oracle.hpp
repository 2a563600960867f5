#pragma once
// Discrete populations with finitely many covariate cells. Population moments
// are exact mass-weighted sums, which makes the TWFE decompositions checkable
// to rounding error. The moment algebra here is written directly against the
// table and does not reuse the estimators.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddiag/panel.hpp"

namespace ddiag::oracle {

struct Cell {
  double prob = 0.0;
  Eigen::MatrixXd x;  // T x k
  Eigen::VectorXd z;  // l
  std::vector<double> group_probs;  // aligned with DiscreteDgp::groups
  Eigen::VectorXd m0;               // T, mean of Y_t(0)
  std::map<int, Eigen::VectorXd> tau;  // group -> T path (used for t >= g)
  double unit_effect = 0.0;
};

struct DiscreteDgp {
  std::string name;
  int T = 2;
  std::vector<std::string> tv_names, ti_names;
  std::vector<int> groups;  // internal indices, T+1 = never treated
  std::map<int, Eigen::VectorXd> untreated_shift;  // group -> T path added to Y(0) (parallel-trends violation)
  double noise_sd = 1.0;
  double unit_effect_sd = 0.0;
  std::vector<Cell> cells;

  int k() const { return static_cast<int>(tv_names.size()); }
  int l() const { return static_cast<int>(ti_names.size()); }
  static DiscreteDgp from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static DiscreteDgp load(const std::filesystem::path& path);
};

struct PopRow {
  int cell = 0;
  int group = 0;
  double mass = 0.0;
  Eigen::MatrixXd x;  // T x k
  Eigen::VectorXd z;
  Eigen::VectorXd y;       // mean outcome path
  Eigen::VectorXd y0;      // mean untreated path without any shift
  Eigen::VectorXd effect;  // tau path where treated, else 0
  Eigen::VectorXd shift;   // parallel-trends violation path
};

struct PopulationTable {
  int T = 0, k = 0, l = 0;
  std::vector<int> groups;
  std::vector<PopRow> rows;

  int never() const { return T + 1; }
  double group_mass(int g) const;
};

PopulationTable enumerate_population(const DiscreteDgp& dgp);

// Rows become units with the row mass as sampling weight.
PanelDataset to_weighted_panel(const PopulationTable& table);

struct Truth {
  std::map<std::pair<int, int>, double> att_gt;  // (g, t), t >= g
  double att_overall = 0.0;
  double att = 0.0;  // two-group tables: ATT(g*, T)
  std::vector<double> conditional_att;  // per row (0 for untreated rows)
};

Truth truth_att(const PopulationTable& table);

// Two-period alpha needs T = 2 and groups {2, 3}; otherwise the double-demeaned
// multi-period regression is solved.
double population_alpha(const PopulationTable& table, bool two_period);

struct TwoPeriodDecomposition {
  double alpha = 0.0;
  double weighted_catt = 0.0, termA = 0.0, termB = 0.0, termC = 0.0;
  std::vector<double> weights;  // w(dX) per row, treated rows only meaningful
  double weight_mean_treated = 0.0;
  double closure_error = 0.0;
};

TwoPeriodDecomposition theorem1_decomposition(const PopulationTable& table);

struct MbCell {
  int g = 0, t = 0;
  // E[w_{g,t} * term | G=g] for MB-1..MB-5 and xi.
  double mb[5] = {0, 0, 0, 0, 0};
  double xi = 0.0;
  // Unweighted E[term | G=g].
  double mb_plain[5] = {0, 0, 0, 0, 0};
  double xi_plain = 0.0;
  double max_abs_mb[5] = {0, 0, 0, 0, 0};
  double telescoping_error = 0.0;  // max over rows |sum MB - xi|
  double att_term = 0.0;           // E[w ATT_{g,t}(X,Z) | G=g], post cells
  double pt_violation = 0.0;       // E[w (shift_t - shift_{g-1}) | G=g]
  double sum_weight = 0.0;         // E[w_{g,t} | G=g]
};

struct StaggeredDecomposition {
  double alpha = 0.0;
  double post_att = 0.0, post_xi = 0.0, pre_xi = 0.0;
  double post_pt_violation = 0.0, pre_pt_violation = 0.0;
  double reconstructed = 0.0;
  double closure_error = 0.0;
  double post_weight_sum = 0.0, pre_weight_sum = 0.0;
  double max_telescoping_error = 0.0;
  Eigen::VectorXd lambda, Lambda0;
  std::vector<MbCell> cells;
};

StaggeredDecomposition theorem3_decomposition(const PopulationTable& table);
MbCell mb_decomposition(const PopulationTable& table, int g, int t);

// Draws n units: cell, then group, then Gaussian unit effect and noise.
PanelDataset simulate_sample(const DiscreteDgp& dgp, int n, std::uint64_t seed);

}  // namespace ddiag::oracle
