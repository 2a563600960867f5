#pragma once
// Group-time ATT estimation by regression adjustment, inverse propensity
// weighting and AIPW, the AIPW implicit weights, aggregation and the unit
// bootstrap.
//
// Periods and groups are internal indices (1..T, never treated = T+1) unless a
// field says otherwise.

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ddiag/numcore.hpp"
#include "ddiag/panel.hpp"

namespace ddiag {

enum class CovariateMode { none, delta_only, base_level, delta_plus_base, average, full_history };

std::string to_string(CovariateMode m);
CovariateMode covariate_mode_from_string(const std::string& s);

struct ModelSpec {
  CovariateMode mode = CovariateMode::delta_plus_base;
  bool include_ti = true;
  // Products of assembled columns, by label. (a, a) gives a square.
  std::vector<std::pair<std::string, std::string>> interactions;

  static ModelSpec intercept_only() { return {CovariateMode::none, false, {}}; }
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

struct CovariateSpec {
  ModelSpec outcome, propensity;

  static CovariateSpec both(const ModelSpec& m) { return {m, m}; }
  nlohmann::json to_json() const;
  // Accepts a single model object (used for both) or {"outcome":..., "propensity":...}.
  static CovariateSpec from_json(const nlohmann::json& j);
};

struct Design {
  Eigen::MatrixXd x;  // n x p over all units
  std::vector<std::string> labels;
};

Design build_design(const PanelDataset& data, const ModelSpec& spec, int g, int t, int base);

enum class Estimator { aipw, ra, ipw };
enum class Comparison { never_treated, not_yet_treated };

std::string to_string(Estimator e);
std::string to_string(Comparison c);
Estimator estimator_from_string(const std::string& s);
Comparison comparison_from_string(const std::string& s);

struct AttOptions {
  Comparison comparison = Comparison::never_treated;
  int anticipation = 0;
  bool trim = false;
  LogitOptions logit;
  std::optional<int> min_group_size;  // default max(p + 2, 5), p = propensity columns
};

struct GroupTimeResult {
  int g = 0, t = 0, base = 0;  // internal indices
  double att = 0.0;
  std::optional<double> se;
  Estimator estimator = Estimator::aipw;
  Estimator used = Estimator::aipw;  // differs after a small-group fallback
  Comparison comparison = Comparison::never_treated;
  int n_treated = 0, n_comparison = 0;
  double max_pscore = 0.0;
  int trimmed = 0;
  bool converged = true;
  std::vector<std::string> warnings;

  nlohmann::json to_json(const PanelDataset& data) const;
};

struct AipwWeightReport {
  std::vector<int> treated_rows, comparison_rows;  // rows of the dataset
  Eigen::VectorXd sample_weight_treated, sample_weight_comparison;
  // Implicit weight per comparison unit and its two components.
  Eigen::VectorXd theta0, odds_weight, correction;
  Design design;  // outcome-model design, all units
  int negative_count = 0;
  double min_weight = 0.0;

  nlohmann::json to_json(const PanelDataset& data) const;
};

struct AttFit {
  GroupTimeResult result;
  AipwWeightReport weights;
};

// Full fit with weights. The outcome may be absent for the weights-only path
// (see att_gt_weights).
AttFit att_gt_fit(const PanelDataset& data, const CovariateSpec& spec, int g, int t, Estimator est,
                  const AttOptions& options = {});
// Implicit weights without touching outcomes.
AipwWeightReport att_gt_weights(const PanelDataset& data, const CovariateSpec& spec, int g, int t,
                                Estimator est, const AttOptions& options = {});

GroupTimeResult att_gt_aipw(const PanelDataset& data, const CovariateSpec& spec, int g, int t,
                            const AttOptions& options = {});
GroupTimeResult att_gt_ra(const PanelDataset& data, const CovariateSpec& spec, int g, int t,
                          const AttOptions& options = {});
GroupTimeResult att_gt_ipw(const PanelDataset& data, const CovariateSpec& spec, int g, int t,
                           const AttOptions& options = {});

// Every (g, t) with t >= g; with include_pre also the pre-period cells t < g
// other than the base period.
std::vector<GroupTimeResult> att_gt_grid(const PanelDataset& data, const CovariateSpec& spec, Estimator est,
                                         const AttOptions& options = {}, bool include_pre = false);

std::pair<double, AipwWeightReport> two_period_aipw(const TwoPeriodView& view, const CovariateSpec& spec,
                                                    const AttOptions& options = {});

struct AggregateValue {
  std::string label;
  int event_time = 0;
  double estimate = 0.0;
  std::optional<double> se;
  std::vector<std::pair<std::pair<int, int>, double>> components;  // ((g,t), weight)
};

struct AggregateResult {
  std::string kind;  // "overall" or "event_study"
  std::vector<AggregateValue> values;

  nlohmann::json to_json(const PanelDataset& data) const;
};

// p-bar_g: weighted share of group g among ever-treated units.
std::vector<std::pair<int, double>> treated_group_shares(const PanelDataset& data);
AggregateResult aggregate_overall(const std::vector<GroupTimeResult>& results, const PanelDataset& data);
AggregateResult aggregate_event_study(const std::vector<GroupTimeResult>& results, const PanelDataset& data);

struct BootstrapResult {
  Eigen::VectorXd se;
  int reps = 0, failed = 0;
  Eigen::MatrixXd draws;  // successful reps x estimates
};

using EstimateFn = std::function<Eigen::VectorXd(const PanelDataset&)>;

// Resamples units with replacement; rep r uses a generator seeded from (seed, r).
BootstrapResult bootstrap_se(const EstimateFn& estimator, const PanelDataset& data, int reps,
                             std::uint64_t seed, int threads = 1);

// Deterministic per-(seed, stream) 64-bit seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ddiag
