#include "ddiag/panel.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "ddiag/error.hpp"
#include "ddiag/kernels.hpp"

namespace ddiag {

namespace {

void require(bool cond, const char* code, const std::string& message) {
  if (!cond) throw ValidationError(code, message);
}

}  // namespace

// ---------------------------------------------------------------------------
// PanelDataset

PanelDataset::PanelDataset(PanelParts parts) : p_(std::move(parts)) {
  const auto n = static_cast<Eigen::Index>(p_.unit_ids.size());
  const auto T = static_cast<Eigen::Index>(p_.periods.size());
  require(n > 0, "empty", "panel has no units");
  require(T >= 2, "too_few_periods", "panel needs at least two periods");
  for (std::size_t t = 1; t < p_.periods.size(); ++t)
    require(p_.periods[t] == p_.periods[t - 1] + 1, "nonconsecutive_periods",
            "period labels must be consecutive integers");
  if (p_.outcome)
    require(p_.outcome->rows() == n && p_.outcome->cols() == T, "shape", "outcome must be n x T");
  require(p_.group.size() == static_cast<std::size_t>(n), "shape", "group vector length != n");
  for (std::size_t i = 0; i < p_.group.size(); ++i) {
    require(p_.group[i] >= 2, "treated_in_first_period",
            "treated in period 1: unit " + p_.unit_ids[i]);
    require(p_.group[i] <= T + 1, "bad_group", "group index out of range for unit " + p_.unit_ids[i]);
  }
  require(p_.tv.size() == p_.tv_names.size(), "shape", "time-varying names/matrices mismatch");
  for (const auto& m : p_.tv)
    require(m.rows() == n && m.cols() == T, "shape", "time-varying covariate must be n x T");
  if (p_.ti_names.empty() && p_.ti.size() == 0) p_.ti.resize(n, 0);
  require(p_.ti.rows() == n && p_.ti.cols() == static_cast<Eigen::Index>(p_.ti_names.size()),
          "shape", "time-invariant covariates must be n x l");
  if (p_.weight.size() == 0) p_.weight = Eigen::VectorXd::Ones(n);
  require(p_.weight.size() == n, "shape", "weight vector length != n");
  for (Eigen::Index i = 0; i < n; ++i)
    require(p_.weight(i) > 0.0 && std::isfinite(p_.weight(i)), "nonpositive_weight",
            "sample weights must be strictly positive (unit " + p_.unit_ids[static_cast<std::size_t>(i)] + ")");
}

const Eigen::MatrixXd& PanelDataset::outcome() const {
  if (!p_.outcome) throw ValidationError("missing_outcome", "dataset has no outcome column");
  return *p_.outcome;
}

int PanelDataset::period_label(int index) const {
  require(index >= 1 && index <= T(), "bad_period", "period index out of range");
  return p_.periods[static_cast<std::size_t>(index - 1)];
}

int PanelDataset::period_index(int label) const {
  const int idx = label - p_.periods.front() + 1;
  require(idx >= 1 && idx <= T(), "bad_period", "period " + std::to_string(label) + " not in panel");
  return idx;
}

std::string PanelDataset::group_label(int g) const {
  if (g == never_group()) return "never";
  return std::to_string(period_label(g));
}

int PanelDataset::tv_index(const std::string& name) const {
  auto it = std::find(p_.tv_names.begin(), p_.tv_names.end(), name);
  return it == p_.tv_names.end() ? -1 : static_cast<int>(it - p_.tv_names.begin());
}

int PanelDataset::ti_index(const std::string& name) const {
  auto it = std::find(p_.ti_names.begin(), p_.ti_names.end(), name);
  return it == p_.ti_names.end() ? -1 : static_cast<int>(it - p_.ti_names.begin());
}

std::vector<int> PanelDataset::treated_groups() const {
  std::set<int> gs;
  for (int g : p_.group)
    if (g != never_group()) gs.insert(g);
  return {gs.begin(), gs.end()};
}

std::vector<int> PanelDataset::units_in_group(int g) const {
  std::vector<int> out;
  for (int i = 0; i < n(); ++i)
    if (p_.group[static_cast<std::size_t>(i)] == g) out.push_back(i);
  return out;
}

std::vector<int> PanelDataset::never_treated_units() const { return units_in_group(never_group()); }

Eigen::MatrixXd PanelDataset::treatment_matrix() const {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n(), T());
  for (int i = 0; i < n(); ++i)
    for (int t = p_.group[static_cast<std::size_t>(i)]; t <= T(); ++t) d(i, t - 1) = 1.0;
  return d;
}

double TwoPeriodView::treated_share() const {
  return weight.dot(treat) / weight.sum();
}

// ---------------------------------------------------------------------------
// Transformations

std::vector<int> derive_groups(const Eigen::MatrixXi& treat) {
  const int T = static_cast<int>(treat.cols());
  std::vector<int> g(static_cast<std::size_t>(treat.rows()), T + 1);
  for (Eigen::Index i = 0; i < treat.rows(); ++i) {
    for (int t = 0; t < T; ++t) {
      const int d = treat(i, t);
      require(d == 0 || d == 1, "bad_treatment", "treatment indicator must be 0 or 1");
      if (t > 0 && d < treat(i, t - 1))
        throw ValidationError("treatment_reversal",
                              "treatment reversal; staggered adoption violated (row " +
                                  std::to_string(i + 1) + ")");
    }
    require(treat(i, 0) == 0, "treated_in_first_period",
            "treated in period 1 (row " + std::to_string(i + 1) + ")");
    for (int t = 0; t < T; ++t)
      if (treat(i, t) == 1) {
        g[static_cast<std::size_t>(i)] = t + 1;
        break;
      }
  }
  return g;
}

TwoPeriodView two_period_view(const PanelDataset& data, int t_star_label) {
  const int ts = data.period_index(t_star_label);
  require(ts >= 2, "bad_period", "t_star must have a preceding period");
  TwoPeriodView v;
  const int n = data.n();
  v.unit_ids = data.unit_ids();
  v.t_star_label = t_star_label;
  v.treat.resize(n);
  for (int i = 0; i < n; ++i) {
    const int g = data.group()[static_cast<std::size_t>(i)];
    if (g < ts)
      throw ValidationError("not_two_group",
                            "not a two-group design at t_star: unit " + data.unit_ids()[static_cast<std::size_t>(i)] +
                                " treated before " + std::to_string(t_star_label));
    v.treat(i) = g == ts ? 1.0 : 0.0;
  }
  v.has_outcome = data.has_outcome();
  if (v.has_outcome) v.dy = data.outcome().col(ts - 1) - data.outcome().col(ts - 2);
  const int k = data.k();
  v.x_pre.resize(n, k);
  v.x_post.resize(n, k);
  for (int j = 0; j < k; ++j) {
    v.x_pre.col(j) = data.tv(j).col(ts - 2);
    v.x_post.col(j) = data.tv(j).col(ts - 1);
  }
  v.dx = v.x_post - v.x_pre;
  v.z = data.ti();
  v.weight = data.weight();
  v.tv_names = data.tv_names();
  v.ti_names = data.ti_names();
  return v;
}

Eigen::MatrixXd double_demean(const Eigen::MatrixXd& m, const Eigen::VectorXd& weights) {
  const Eigen::Index n = m.rows(), T = m.cols();
  require(weights.size() == n, "shape", "double_demean: weight length != rows");
  const double wtot = weights.sum();
  require(wtot > 0.0, "shape", "double_demean: weights sum to zero");
  const std::span<const double> w(weights.data(), static_cast<std::size_t>(n));

  Eigen::VectorXd rowmean = Eigen::VectorXd::Zero(n);
  std::span<double> rm(rowmean.data(), static_cast<std::size_t>(n));
  Eigen::VectorXd colmean(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    std::span<const double> col(m.col(t).data(), static_cast<std::size_t>(n));
    kernels::add_inplace(rm, col);
    colmean(t) = kernels::wsum(w, col) / wtot;
  }
  rowmean /= static_cast<double>(T);
  const double grand = colmean.mean();

  Eigen::MatrixXd out(n, T);
  for (Eigen::Index t = 0; t < T; ++t)
    kernels::demean_column(std::span<double>(out.col(t).data(), static_cast<std::size_t>(n)),
                           std::span<const double>(m.col(t).data(), static_cast<std::size_t>(n)),
                           rm, colmean(t) - grand);
  return out;
}

Eigen::MatrixXd double_demean_within(const Eigen::MatrixXd& m, const Eigen::VectorXd& weights,
                                     const std::vector<int>& cluster) {
  require(cluster.size() == static_cast<std::size_t>(m.rows()), "shape",
          "double_demean_within: cluster length != rows");
  std::set<int> ids(cluster.begin(), cluster.end());
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (int c : ids) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < cluster.size(); ++i)
      if (cluster[i] == c) rows.push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd sub = m(rows, Eigen::all);
    Eigen::VectorXd wsub = weights(rows);
    out(rows, Eigen::all) = double_demean(sub, wsub);
  }
  return out;
}

PanelDataset select_units(const PanelDataset& data, const std::vector<int>& rows, bool relabel) {
  const auto& src = data.parts();
  PanelParts p;
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  p.periods = src.periods;
  p.unit_ids.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& id = src.unit_ids[static_cast<std::size_t>(rows[r])];
    p.unit_ids.push_back(relabel ? id + "#" + std::to_string(r) : id);
    p.group.push_back(src.group[static_cast<std::size_t>(rows[r])]);
  }
  if (src.outcome) p.outcome = (*src.outcome)(idx, Eigen::all);
  p.tv_names = src.tv_names;
  for (const auto& m : src.tv) p.tv.push_back(m(idx, Eigen::all));
  p.ti_names = src.ti_names;
  p.ti = src.ti(idx, Eigen::all);
  p.weight = src.weight(idx);
  return PanelDataset(std::move(p));
}

PanelDataset subset_periods(const PanelDataset& data, const std::vector<int>& labels) {
  require(labels.size() >= 2, "bad_period", "need at least two periods");
  std::vector<int> idx;
  for (int lab : labels) idx.push_back(data.period_index(lab) - 1);
  for (std::size_t j = 1; j < idx.size(); ++j)
    require(idx[j] > idx[j - 1], "bad_period", "periods must be increasing");
  const auto& src = data.parts();
  PanelParts p;
  p.unit_ids = src.unit_ids;
  const int T = static_cast<int>(idx.size());
  for (int j = 0; j < T; ++j) p.periods.push_back(j + 1);
  std::vector<Eigen::Index> cols(idx.begin(), idx.end());
  if (src.outcome) p.outcome = (*src.outcome)(Eigen::all, cols);
  p.tv_names = src.tv_names;
  for (const auto& m : src.tv) p.tv.push_back(m(Eigen::all, cols));
  p.ti_names = src.ti_names;
  p.ti = src.ti;
  p.weight = src.weight;
  Eigen::MatrixXd d = data.treatment_matrix()(Eigen::all, cols);
  p.group = derive_groups(d.cast<int>());
  // Retained labels become consecutive 1..T; keep the original labels when they already are.
  bool consecutive = true;
  for (std::size_t j = 1; j < labels.size(); ++j) consecutive &= labels[j] == labels[j - 1] + 1;
  if (consecutive)
    for (int j = 0; j < T; ++j) p.periods[static_cast<std::size_t>(j)] = labels[static_cast<std::size_t>(j)];
  return PanelDataset(std::move(p));
}

PanelDataset without_outcome(const PanelDataset& data) {
  PanelParts p = data.parts();
  p.outcome.reset();
  return PanelDataset(std::move(p));
}

}  // namespace ddiag
