#pragma once
// Covariate balance under an estimator's implicit weights.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddiag/drdid.hpp"
#include "ddiag/panel.hpp"
#include "ddiag/twfe.hpp"

namespace ddiag {

// One comparison: treated rows against comparison rows for a (g, t) cell.
// Implicit weights multiply the sampling weights.
struct BalanceScope {
  int g = 0, t = 0, base = 0;  // internal indices
  std::vector<int> treated, comparison;
  Eigen::VectorXd w_treated, w_comparison;
  double agg_weight = 1.0;
};

struct WeightProfile {
  std::string estimator;
  std::vector<BalanceScope> scopes;
};

// Builders. Rows of a TwoPeriodView are rows of its dataset.
WeightProfile twfe_two_period_profile(const TwoPeriodView& view, const TwoPeriodTwfeWeights& w, int t_star_index);
WeightProfile twfe_multi_period_profile(const PanelDataset& data, const MpTwfeWeights& w);
// Post-treatment cells of a drdid estimator, aggregated with w^o(g,t).
WeightProfile drdid_profile(const PanelDataset& data, const CovariateSpec& spec, Estimator est,
                            const AttOptions& options = {});
// Same scopes as `like` with all implicit weights set to one.
WeightProfile uniform_profile(const WeightProfile& like);

enum class FunctionalKind { change, level_base, level_t, level_at, average, ti, indicator };

struct Functional {
  FunctionalKind kind = FunctionalKind::change;
  std::string covariate;
  int period_label = 0;    // level_at
  double threshold = 0.0;  // indicator: 1{value at base >= threshold}

  std::string label() const;
  // "change:x", "base:x", "post:x", "at:x:2003", "avg:x", "ti:z", "ind:x>=3"
  static Functional parse(const std::string& s);
};

// change, base and post level of every time-varying covariate, then every
// time-invariant one.
std::vector<Functional> default_functionals(const PanelDataset& data);

struct BalanceRow {
  std::string label;
  std::optional<std::pair<int, int>> cell;  // (g, t) for breakdown rows; empty for the aggregate
  double mean_treated_raw = 0, mean_comparison_raw = 0;
  double mean_treated_weighted = 0, mean_comparison_weighted = 0;
  double raw = 0, weighted = 0;
  bool degenerate = false;
};

struct NegativeWeightSummary {
  int count = 0;
  double share = 0.0;
  double min_weight = 0.0;
  std::vector<std::string> unit_ids;

  nlohmann::json to_json() const;
};

struct BalanceReport {
  std::string estimator;
  std::vector<BalanceRow> rows;       // aggregate rows, one per functional
  std::vector<BalanceRow> breakdown;  // per-(g,t) rows when there is more than one scope
  double ess_treated = 0, ess_comparison = 0;
  NegativeWeightSummary negative_treated, negative_comparison;

  nlohmann::json to_json(const PanelDataset& data) const;
  std::string to_csv(const PanelDataset& data) const;
};

BalanceReport balance_report(const WeightProfile& profile, const PanelDataset& data,
                             const std::vector<Functional>& functionals);

// Sign counts over every (unit, scope) weight of one side.
NegativeWeightSummary negative_weight_summary(const WeightProfile& profile, const PanelDataset& data, bool treated);
NegativeWeightSummary negative_weight_summary(const Eigen::VectorXd& weights,
                                              const std::vector<std::string>& ids = {});

struct LovePlotOptions {
  std::string title;
  int width = 640;
  bool include_breakdown = false;
};

std::string love_plot_svg(const BalanceReport& report, const LovePlotOptions& options = {});

}  // namespace ddiag
