#pragma once
// Two-way fixed effects: first-difference and within fits, and the implicit
// weights that rewrite alpha as a contrast of outcome paths.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddiag/panel.hpp"

namespace ddiag {

struct TwfeFit {
  double alpha = 0.0;
  Eigen::VectorXd beta;
  std::vector<std::string> labels;  // covariate labels for beta
  int n = 0, T = 0;
  std::string form;  // "first_difference" or "within"
  std::optional<std::string> region;  // time-invariant column used for region-by-period effects

  nlohmann::json to_json() const;
};

// Weighted OLS of dY on (1, D, dX).
TwfeFit fit_fd_twfe(const TwoPeriodView& view);
// alpha through the residualised treatment; throws when D is explained by dX.
double fwl_alpha(const TwoPeriodView& view);

struct TwoPeriodTwfeWeights {
  double alpha = 0.0;
  double pi = 0.0;     // weighted treated share
  double resid_var = 0.0;  // mean of w (D - L)^2 / mean of w
  Eigen::VectorXd lhat;    // projection of D on (1, dX)
  Eigen::VectorXd treat;
  // w1 on treated rows, w0 on untreated rows.
  Eigen::VectorXd weight;
  int negative_treated = 0, negative_untreated = 0;

  nlohmann::json to_json(const std::vector<std::string>& unit_ids) const;
};

TwoPeriodTwfeWeights two_period_implicit_weights(const TwoPeriodView& view);

// Double-demeaned regression of Y on (D, X). With a region column the
// demeaning is done separately within each region (region-by-period effects).
TwfeFit fit_fe_twfe(const PanelDataset& data, const std::optional<std::string>& region = std::nullopt);

// The within transform used by fit_fe_twfe, applied to any n x T matrix.
Eigen::MatrixXd within_transform(const PanelDataset& data, const Eigen::MatrixXd& m,
                                 const std::optional<std::string>& region = std::nullopt);

struct TwfeCell {
  int g = 0, t = 0;  // internal period indices
  bool post = false;
  double sum_weight = 0.0;       // the cell's share of the normaliser (w-bar)
  double treated_mean_rho = 0.0;
  double treated_part = 0.0;     // pi_g E[rho_t (Y_t - Y_{g-1}) | G=g] / denom
  double comparison_part = 0.0;  // w-bar times the never-treated reweighted path
  double contribution = 0.0;     // treated_part - comparison_part
  int negative_treated = 0, negative_comparison = 0;
  // False when the never-treated mean of rho_t is zero: the reweighting is
  // undefined and that period's comparison path is left in the remainder.
  bool comparison_defined = true;
};

struct MpTwfeWeights {
  double alpha = 0.0;
  Eigen::VectorXd gamma;
  Eigen::MatrixXd rho;  // n x T residualised demeaned treatment
  Eigen::MatrixXd h;    // treated groups x T, h(g,t) from shares (row per treated group)
  std::vector<int> groups;
  Eigen::VectorXd group_share;  // weighted pi_g for each treated group, then never-treated last
  double denom = 0.0;
  std::vector<TwfeCell> cells;  // treated groups x all periods
  double post_sum = 0.0, pre_sum = 0.0;
  double post_contribution = 0.0, pre_contribution = 0.0;
  double remainder = 0.0;
  double alpha_pre_zeroed = 0.0;
  int negative_count = 0;
  bool has_outcome = true;
  std::vector<std::string> warnings;

  nlohmann::json to_json(const PanelDataset& data) const;
};

// Weight structure only (rho, normaliser, w-bar); needs no outcome.
MpTwfeWeights mp_weight_structure(const PanelDataset& data,
                                  const std::optional<std::string>& region = std::nullopt);
// Requires at least one never-treated unit. The fit must come from the same data.
MpTwfeWeights mp_implicit_weights(const PanelDataset& data, const TwfeFit& fit);

// h(g,t) with weighted shares; rows follow data.treated_groups().
Eigen::MatrixXd twfe_h_table(const PanelDataset& data);

struct NeverTreatedProjection {
  Eigen::VectorXd lambda;   // T
  Eigen::VectorXd Lambda0;  // k
};

NeverTreatedProjection never_treated_projection(const PanelDataset& data);

}  // namespace ddiag
