#pragma once
// Balanced long panels: ingestion, validation and the transformations the
// estimators work on (two-period differences, double demeaning).

#include <Eigen/Dense>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ddiag {

// Mutable staging area for a dataset. Periods are stored as labels; groups use
// internal period indices 1..T, with T+1 meaning never treated.
struct PanelParts {
  std::vector<std::string> unit_ids;
  std::vector<int> periods;
  std::optional<Eigen::MatrixXd> outcome;  // n x T
  std::vector<int> group;
  std::vector<std::string> tv_names;
  std::vector<Eigen::MatrixXd> tv;  // one n x T matrix per time-varying covariate
  std::vector<std::string> ti_names;
  Eigen::MatrixXd ti;  // n x l
  Eigen::VectorXd weight;
};

// Immutable balanced panel. Construction validates every structural invariant.
class PanelDataset {
 public:
  explicit PanelDataset(PanelParts parts);

  int n() const { return static_cast<int>(p_.unit_ids.size()); }
  int T() const { return static_cast<int>(p_.periods.size()); }
  int k() const { return static_cast<int>(p_.tv.size()); }
  int l() const { return static_cast<int>(p_.ti_names.size()); }
  int never_group() const { return T() + 1; }

  const std::vector<std::string>& unit_ids() const { return p_.unit_ids; }
  const std::vector<int>& periods() const { return p_.periods; }
  bool has_outcome() const { return p_.outcome.has_value(); }
  // Throws ValidationError when the dataset was loaded without outcomes.
  const Eigen::MatrixXd& outcome() const;
  const std::vector<int>& group() const { return p_.group; }
  const std::vector<std::string>& tv_names() const { return p_.tv_names; }
  const Eigen::MatrixXd& tv(int j) const { return p_.tv[static_cast<std::size_t>(j)]; }
  const std::vector<Eigen::MatrixXd>& tv_all() const { return p_.tv; }
  const std::vector<std::string>& ti_names() const { return p_.ti_names; }
  const Eigen::MatrixXd& ti() const { return p_.ti; }
  const Eigen::VectorXd& weight() const { return p_.weight; }

  int period_label(int index) const;  // index in 1..T
  int period_index(int label) const;  // throws when absent
  std::string group_label(int g) const;
  int tv_index(const std::string& name) const;  // -1 when absent
  int ti_index(const std::string& name) const;

  bool is_never_treated(int i) const { return p_.group[static_cast<std::size_t>(i)] == T() + 1; }
  // Distinct treated groups (internal indices), ascending.
  std::vector<int> treated_groups() const;
  std::vector<int> units_in_group(int g) const;
  std::vector<int> never_treated_units() const;
  // D_it = 1{t >= G_i} as an n x T matrix.
  Eigen::MatrixXd treatment_matrix() const;

  const PanelParts& parts() const { return p_; }

 private:
  PanelParts p_;
};

struct TwoPeriodView {
  std::vector<std::string> unit_ids;
  int t_star_label = 0;
  Eigen::VectorXd treat;
  bool has_outcome = false;
  Eigen::VectorXd dy;
  Eigen::MatrixXd dx, x_pre, x_post, z;
  Eigen::VectorXd weight;
  std::vector<std::string> tv_names, ti_names;

  int n() const { return static_cast<int>(treat.size()); }
  int k() const { return static_cast<int>(dx.cols()); }
  // Sampling-weighted treated share.
  double treated_share() const;
};

// G_i = first t with D_it = 1, or T+1. Rows must be monotone with D_i1 = 0.
std::vector<int> derive_groups(const Eigen::MatrixXi& treat);

TwoPeriodView two_period_view(const PanelDataset& data, int t_star_label);

// m[i,t] - rowmean_i - colmean_t + grandmean, column means weighted by unit weights.
Eigen::MatrixXd double_demean(const Eigen::MatrixXd& m, const Eigen::VectorXd& weights);
// Double demeaning applied separately within each cluster (region-by-period effects).
Eigen::MatrixXd double_demean_within(const Eigen::MatrixXd& m, const Eigen::VectorXd& weights,
                                     const std::vector<int>& cluster);

PanelDataset select_units(const PanelDataset& data, const std::vector<int>& rows,
                          bool relabel = false);
// Keeps the listed period labels (consecutive after the cut) and re-derives groups.
PanelDataset subset_periods(const PanelDataset& data, const std::vector<int>& labels);
PanelDataset without_outcome(const PanelDataset& data);

// ---------------------------------------------------------------------------
// Long CSV ingestion

struct PanelSchema {
  std::string unit, time;
  std::optional<std::string> outcome, treat, group, weight;
  std::vector<std::string> tv, ti;

  static PanelSchema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Issue {
  std::string code, message, location;
};

struct ValidationReport {
  std::vector<Issue> errors, warnings;
  int n = 0, T = 0;
  std::vector<std::pair<std::string, int>> group_sizes;

  bool ok() const { return errors.empty(); }
  std::string to_text() const;
  nlohmann::json to_json() const;
};

struct LoadOptions {
  bool drop_always_treated = false;
  bool require_outcome = true;
};

struct LoadResult {
  std::optional<PanelDataset> data;
  ValidationReport report;
};

LoadResult read_long_csv(const std::filesystem::path& path, const PanelSchema& schema,
                         const LoadOptions& options = {});
LoadResult read_long_csv(std::istream& in, const PanelSchema& schema,
                         const LoadOptions& options = {});
// Throws ValidationError carrying the first error.
PanelDataset load_long_csv(const std::filesystem::path& path, const PanelSchema& schema,
                           const LoadOptions& options = {});

ValidationReport summarize(const PanelDataset& data);

// Writes unit,time,[y],treat,<tv...>,<ti...>,weight with shortest round-trip
// number formatting.
void write_long_csv(const PanelDataset& data, std::ostream& out);
void write_long_csv(const PanelDataset& data, const std::filesystem::path& path);
PanelSchema schema_for_written(const PanelDataset& data);

}  // namespace ddiag
