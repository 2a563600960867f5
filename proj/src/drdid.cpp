#include "ddiag/drdid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "ddiag/error.hpp"

namespace ddiag {

namespace {

constexpr double kOverlapLimit = 1.0 - 1e-6;
constexpr double kTrimLimit = 1e-3;

const std::map<std::string, CovariateMode>& mode_names() {
  static const std::map<std::string, CovariateMode> m{{"none", CovariateMode::none},
                                                      {"delta_only", CovariateMode::delta_only},
                                                      {"base_level", CovariateMode::base_level},
                                                      {"delta_plus_base", CovariateMode::delta_plus_base},
                                                      {"average", CovariateMode::average},
                                                      {"full_history", CovariateMode::full_history}};
  return m;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

Eigen::VectorXd rows_of(const Eigen::VectorXd& v, const std::vector<int>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r)) = v(rows[r]);
  return out;
}

Eigen::MatrixXd with_ones(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

std::vector<int> comparison_rows(const PanelDataset& data, int g, int t, const AttOptions& opt) {
  std::vector<int> rows;
  const int cutoff = std::max(t, g) + opt.anticipation;
  for (int i = 0; i < data.n(); ++i) {
    const int gi = data.group()[static_cast<std::size_t>(i)];
    const bool never = gi == data.never_group();
    if (never || (opt.comparison == Comparison::not_yet_treated && gi > cutoff && gi != g)) rows.push_back(i);
  }
  return rows;
}

struct Core {
  std::vector<int> treated, comparison;
  Eigen::VectorXd w_t, w_c;
  Design outcome_design;
  Eigen::VectorXd odds;  // comparison units; 1 when no propensity model
  Eigen::VectorXd theta0, odds_weight, correction;
  Estimator used = Estimator::aipw;
  double max_p = 0.0;
  int trimmed = 0;
  bool converged = true;
  int base = 0;
  std::vector<std::string> warnings;
};

Core fit_core(const PanelDataset& data, const CovariateSpec& spec, int g, int t, Estimator est,
              const AttOptions& opt) {
  const int T = data.T();
  const auto groups = data.treated_groups();
  if (std::find(groups.begin(), groups.end(), g) == groups.end())
    throw EstimationError("empty_group", "group " + std::to_string(g) + " has no units");
  if (t < 1 || t > T) throw ValidationError("bad_period", "period index out of range");
  if (opt.anticipation < 0) throw ValidationError("bad_option", "anticipation must be nonnegative");
  Core c;
  c.base = g - 1 - opt.anticipation;
  if (c.base < 1)
    throw EstimationError("no_base_period", "no base period before group " + data.group_label(g) +
                                                " given the anticipation setting");
  if (t == c.base) throw ValidationError("bad_period", "t equals the base period");

  c.treated = data.units_in_group(g);
  c.comparison = comparison_rows(data, g, t, opt);
  if (c.comparison.empty())
    throw EstimationError("empty_comparison", "comparison group is empty for group " + data.group_label(g) +
                                                  ", period " + std::to_string(data.period_label(t)));
  c.used = est;

  ModelSpec out_spec = est == Estimator::ipw ? ModelSpec::intercept_only() : spec.outcome;
  c.outcome_design = build_design(data, out_spec, g, t, c.base);

  if (est != Estimator::ra) {
    Design pd = build_design(data, spec.propensity, g, t, c.base);
    const int p = static_cast<int>(pd.x.cols());
    const int min_size = opt.min_group_size.value_or(std::max(p + 2, 5));
    const int smallest = static_cast<int>(std::min(c.treated.size(), c.comparison.size()));
    if (smallest < min_size) {
      c.warnings.push_back("group too small for a propensity model (" + std::to_string(smallest) + " < " +
                           std::to_string(min_size) + "); fell back to regression adjustment");
      c.used = Estimator::ra;
      if (est == Estimator::ipw) c.outcome_design = build_design(data, ModelSpec::intercept_only(), g, t, c.base);
    } else {
      for (int pass = 0; pass < 2; ++pass) {
        std::vector<int> s = c.treated;
        s.insert(s.end(), c.comparison.begin(), c.comparison.end());
        Eigen::VectorXd lab(static_cast<Eigen::Index>(s.size()));
        lab.head(static_cast<Eigen::Index>(c.treated.size())).setOnes();
        lab.tail(static_cast<Eigen::Index>(c.comparison.size())).setZero();
        const Eigen::MatrixXd xs = rows_of(pd.x, s);
        auto model = logit_fit(xs, lab, rows_of(data.weight(), s), opt.logit, pd.labels);
        c.converged = model.converged;
        const Eigen::VectorXd ps = model.predict(xs);
        c.max_p = ps.maxCoeff();
        if (opt.trim && pass == 0) {
          std::vector<int> keep_t, keep_c;
          for (std::size_t r = 0; r < s.size(); ++r) {
            const double pr = ps(static_cast<Eigen::Index>(r));
            if (pr > 1.0 - kTrimLimit || pr < kTrimLimit) continue;
            (r < c.treated.size() ? keep_t : keep_c).push_back(s[r]);
          }
          const int dropped = static_cast<int>(s.size() - keep_t.size() - keep_c.size());
          if (dropped > 0) {
            if (keep_t.empty() || keep_c.empty())
              throw EstimationError("overlap", "trimming removed every treated or comparison unit");
            c.trimmed = dropped;
            c.treated = std::move(keep_t);
            c.comparison = std::move(keep_c);
            continue;
          }
        }
        if (c.max_p >= kOverlapLimit)
          throw EstimationError("overlap", "overlap violated: fitted propensity score " + std::to_string(c.max_p) +
                                               " >= 1 - 1e-6; enable trimming or change the specification");
        c.odds = ps.tail(static_cast<Eigen::Index>(c.comparison.size()))
                     .unaryExpr([](double q) { return q / (1.0 - q); });
        break;
      }
      if (!c.converged) c.warnings.push_back("propensity model did not converge");
    }
  }
  c.w_t = rows_of(data.weight(), c.treated);
  c.w_c = rows_of(data.weight(), c.comparison);
  if (c.odds.size() == 0) c.odds = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(c.comparison.size()));

  // Implicit comparison weights: normalised odds plus the regression correction
  // that balances the outcome-model columns exactly.
  const double wc_sum = c.w_c.sum();
  c.odds_weight = c.odds / (c.w_c.dot(c.odds) / wc_sum);
  const Eigen::MatrixXd Wc = with_ones(rows_of(c.outcome_design.x, c.comparison));
  const Eigen::MatrixXd Wt = with_ones(rows_of(c.outcome_design.x, c.treated));
  const Eigen::VectorXd mean_t = Wt.transpose() * c.w_t / c.w_t.sum();
  const Eigen::VectorXd mean_c = Wc.transpose() * c.w_c.cwiseProduct(c.odds_weight) / wc_sum;
  const Eigen::MatrixXd M = Wc.transpose() * c.w_c.asDiagonal() * Wc / wc_sum;
  // Rank problems get a named error from the projection code.
  (void)linear_projection(rows_of(c.outcome_design.x, c.comparison), Eigen::VectorXd::Zero(Wc.rows()), c.w_c, true,
                          c.outcome_design.labels);
  const Eigen::VectorXd a = M.colPivHouseholderQr().solve(mean_t - mean_c);
  c.correction = Wc * a;
  c.theta0 = c.odds_weight + c.correction;
  return c;
}

AipwWeightReport make_report(const Core& c) {
  AipwWeightReport r;
  r.treated_rows = c.treated;
  r.comparison_rows = c.comparison;
  r.sample_weight_treated = c.w_t;
  r.sample_weight_comparison = c.w_c;
  r.theta0 = c.theta0;
  r.odds_weight = c.odds_weight;
  r.correction = c.correction;
  r.design = c.outcome_design;
  for (Eigen::Index i = 0; i < c.theta0.size(); ++i)
    if (c.theta0(i) < 0.0) ++r.negative_count;
  r.min_weight = c.theta0.size() ? std::min(1.0, c.theta0.minCoeff()) : 1.0;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and JSON

std::string to_string(CovariateMode m) {
  for (const auto& [k, v] : mode_names())
    if (v == m) return k;
  return "?";
}

CovariateMode covariate_mode_from_string(const std::string& s) {
  auto it = mode_names().find(s);
  if (it == mode_names().end()) throw ValidationError("bad_option", "unknown covariate mode: " + s);
  return it->second;
}

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::aipw:
      return "aipw";
    case Estimator::ra:
      return "ra";
    case Estimator::ipw:
      return "ipw";
  }
  return "?";
}

std::string to_string(Comparison c) { return c == Comparison::never_treated ? "never_treated" : "not_yet_treated"; }

Estimator estimator_from_string(const std::string& s) {
  if (s == "aipw") return Estimator::aipw;
  if (s == "ra") return Estimator::ra;
  if (s == "ipw") return Estimator::ipw;
  throw ValidationError("bad_option", "unknown estimator: " + s);
}

Comparison comparison_from_string(const std::string& s) {
  if (s == "never_treated") return Comparison::never_treated;
  if (s == "not_yet_treated") return Comparison::not_yet_treated;
  throw ValidationError("bad_option", "unknown comparison group: " + s);
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json inter = nlohmann::json::array();
  for (const auto& [a, b] : interactions) inter.push_back({a, b});
  return {{"mode", to_string(mode)}, {"include_ti", include_ti}, {"interactions", inter}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("bad_config", "covariate model must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "mode" && it.key() != "include_ti" && it.key() != "interactions")
      throw ValidationError("bad_config", "unknown covariate model key: " + it.key());
  ModelSpec m;
  if (j.contains("mode")) m.mode = covariate_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("include_ti")) m.include_ti = j.at("include_ti").get<bool>();
  if (j.contains("interactions"))
    for (const auto& p : j.at("interactions")) {
      if (!p.is_array() || p.size() != 2) throw ValidationError("bad_config", "interaction must be a pair of labels");
      m.interactions.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
    }
  return m;
}

nlohmann::json CovariateSpec::to_json() const { return {{"outcome", outcome.to_json()}, {"propensity", propensity.to_json()}}; }

CovariateSpec CovariateSpec::from_json(const nlohmann::json& j) {
  if (j.is_object() && (j.contains("outcome") || j.contains("propensity"))) {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "outcome" && it.key() != "propensity")
        throw ValidationError("bad_config", "unknown covariate spec key: " + it.key());
    CovariateSpec s;
    if (j.contains("outcome")) s.outcome = ModelSpec::from_json(j.at("outcome"));
    if (j.contains("propensity")) s.propensity = ModelSpec::from_json(j.at("propensity"));
    return s;
  }
  return both(ModelSpec::from_json(j));
}

// ---------------------------------------------------------------------------
// Design

Design build_design(const PanelDataset& data, const ModelSpec& spec, int g, int t, int base) {
  const int T = data.T(), k = data.k(), n = data.n();
  if (base < 1 || base >= g) throw ValidationError("bad_period", "base period must precede the group's first period");
  if (t < 1 || t > T) throw ValidationError("bad_period", "period index out of range");
  std::vector<Eigen::VectorXd> cols;
  std::vector<std::string> labels;
  auto lab = [&](int j) { return data.tv_names()[static_cast<std::size_t>(j)]; };
  for (int j = 0; j < k; ++j) {
    const Eigen::MatrixXd& x = data.tv(j);
    switch (spec.mode) {
      case CovariateMode::none:
        break;
      case CovariateMode::delta_only:
        cols.push_back(x.col(t - 1) - x.col(base - 1));
        labels.push_back("d_" + lab(j));
        break;
      case CovariateMode::base_level:
        cols.push_back(x.col(base - 1));
        labels.push_back(lab(j) + "_base");
        break;
      case CovariateMode::delta_plus_base:
        break;
      case CovariateMode::average:
        cols.push_back(x.rowwise().mean());
        labels.push_back(lab(j) + "_avg");
        break;
      case CovariateMode::full_history:
        for (int s = 1; s <= T; ++s) {
          cols.push_back(x.col(s - 1));
          labels.push_back(lab(j) + "@" + std::to_string(data.period_label(s)));
        }
        break;
    }
  }
  if (spec.mode == CovariateMode::delta_plus_base) {
    for (int j = 0; j < k; ++j) {
      cols.push_back(data.tv(j).col(t - 1) - data.tv(j).col(base - 1));
      labels.push_back("d_" + lab(j));
    }
    for (int j = 0; j < k; ++j) {
      cols.push_back(data.tv(j).col(base - 1));
      labels.push_back(lab(j) + "_base");
    }
  }
  if (spec.include_ti)
    for (int j = 0; j < data.l(); ++j) {
      cols.push_back(data.ti().col(j));
      labels.push_back(data.ti_names()[static_cast<std::size_t>(j)]);
    }
  const std::size_t base_cols = cols.size();
  for (const auto& [a, b] : spec.interactions) {
    auto find = [&](const std::string& name) {
      for (std::size_t c = 0; c < base_cols; ++c)
        if (labels[c] == name) return c;
      throw ValidationError("bad_config", "interaction references unknown design column: " + name);
    };
    const std::size_t ia = find(a), ib = find(b);
    cols.push_back(cols[ia].cwiseProduct(cols[ib]));
    labels.push_back(a == b ? a + "^2" : a + "*" + b);
  }
  Design d;
  d.x.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& v = cols[c];
    if (n > 1 && (v.array() == v(0)).all())
      throw NumericError("rank_deficient", "constant design column: " + labels[c]);
    d.x.col(static_cast<Eigen::Index>(c)) = v;
  }
  d.labels = std::move(labels);
  return d;
}

// ---------------------------------------------------------------------------
// Estimators

AttFit att_gt_fit(const PanelDataset& data, const CovariateSpec& spec, int g, int t, Estimator est,
                  const AttOptions& opt) {
  Core c = fit_core(data, spec, g, t, est, opt);
  const Eigen::MatrixXd& y = data.outcome();
  const Eigen::VectorXd dy_all = y.col(t - 1) - y.col(c.base - 1);
  const Eigen::VectorXd dy_t = rows_of(dy_all, c.treated), dy_c = rows_of(dy_all, c.comparison);
  const Eigen::MatrixXd xt = rows_of(c.outcome_design.x, c.treated), xc = rows_of(c.outcome_design.x, c.comparison);

  double att = 0.0;
  const double st = c.w_t.sum(), sc = c.w_c.sum();
  if (c.used == Estimator::ipw) {
    att = c.w_t.dot(dy_t) / st - c.w_c.cwiseProduct(c.odds).dot(dy_c) / c.w_c.dot(c.odds);
  } else {
    auto m = linear_projection(xc, dy_c, c.w_c, true, c.outcome_design.labels);
    const Eigen::VectorXd rt = dy_t - m.fitted(xt);
    att = c.w_t.dot(rt) / st;
    if (c.used == Estimator::aipw) {
      const Eigen::VectorXd rc = dy_c - m.fitted(xc);
      att -= c.w_c.cwiseProduct(c.odds_weight).dot(rc) / sc;
    }
  }

  AttFit f;
  auto& r = f.result;
  r.g = g;
  r.t = t;
  r.base = c.base;
  r.att = att;
  r.estimator = est;
  r.used = c.used;
  r.comparison = opt.comparison;
  r.n_treated = static_cast<int>(c.treated.size());
  r.n_comparison = static_cast<int>(c.comparison.size());
  r.max_pscore = c.max_p;
  r.trimmed = c.trimmed;
  r.converged = c.converged;
  r.warnings = c.warnings;
  f.weights = make_report(c);
  return f;
}

AipwWeightReport att_gt_weights(const PanelDataset& data, const CovariateSpec& spec, int g, int t, Estimator est,
                                const AttOptions& opt) {
  return make_report(fit_core(data, spec, g, t, est, opt));
}

GroupTimeResult att_gt_aipw(const PanelDataset& data, const CovariateSpec& spec, int g, int t, const AttOptions& o) {
  return att_gt_fit(data, spec, g, t, Estimator::aipw, o).result;
}
GroupTimeResult att_gt_ra(const PanelDataset& data, const CovariateSpec& spec, int g, int t, const AttOptions& o) {
  return att_gt_fit(data, spec, g, t, Estimator::ra, o).result;
}
GroupTimeResult att_gt_ipw(const PanelDataset& data, const CovariateSpec& spec, int g, int t, const AttOptions& o) {
  return att_gt_fit(data, spec, g, t, Estimator::ipw, o).result;
}

std::vector<GroupTimeResult> att_gt_grid(const PanelDataset& data, const CovariateSpec& spec, Estimator est,
                                         const AttOptions& opt, bool include_pre) {
  std::vector<GroupTimeResult> out;
  for (int g : data.treated_groups()) {
    const int base = g - 1 - opt.anticipation;
    for (int t = 1; t <= data.T(); ++t) {
      if (t < g && (!include_pre || t == base)) continue;
      out.push_back(att_gt_fit(data, spec, g, t, est, opt).result);
    }
  }
  return out;
}

std::pair<double, AipwWeightReport> two_period_aipw(const TwoPeriodView& v, const CovariateSpec& spec,
                                                    const AttOptions& opt) {
  PanelParts p;
  p.unit_ids = v.unit_ids;
  p.periods = {v.t_star_label - 1, v.t_star_label};
  if (v.has_outcome) {
    Eigen::MatrixXd y(v.n(), 2);
    y.col(0).setZero();
    y.col(1) = v.dy;
    p.outcome = y;
  }
  for (int i = 0; i < v.n(); ++i) p.group.push_back(v.treat(i) == 1.0 ? 2 : 3);
  p.tv_names = v.tv_names;
  for (int j = 0; j < v.k(); ++j) {
    Eigen::MatrixXd m(v.n(), 2);
    m.col(0) = v.x_pre.col(j);
    m.col(1) = v.x_post.col(j);
    p.tv.push_back(m);
  }
  p.ti_names = v.ti_names;
  p.ti = v.z;
  p.weight = v.weight;
  PanelDataset d(std::move(p));
  AttOptions o = opt;
  o.comparison = Comparison::never_treated;
  o.anticipation = 0;
  if (!v.has_outcome) return {std::nan(""), att_gt_weights(d, spec, 2, 2, Estimator::aipw, o)};
  auto f = att_gt_fit(d, spec, 2, 2, Estimator::aipw, o);
  return {f.result.att, f.weights};
}

nlohmann::json GroupTimeResult::to_json(const PanelDataset& data) const {
  nlohmann::json j = {{"g", data.period_label(g)},
                      {"t", data.period_label(t)},
                      {"base_period", data.period_label(base)},
                      {"event_time", t - g},
                      {"att", att},
                      {"se", se ? nlohmann::json(*se) : nlohmann::json(nullptr)},
                      {"estimator", to_string(estimator)},
                      {"estimator_used", to_string(used)},
                      {"comparison", to_string(comparison)},
                      {"n_treated", n_treated},
                      {"n_comparison", n_comparison},
                      {"max_pscore", max_pscore},
                      {"trimmed", trimmed},
                      {"converged", converged},
                      {"warnings", warnings}};
  return j;
}

nlohmann::json AipwWeightReport::to_json(const PanelDataset& data) const {
  nlohmann::json units = nlohmann::json::array();
  for (std::size_t r = 0; r < comparison_rows.size(); ++r) {
    const auto e = static_cast<Eigen::Index>(r);
    units.push_back({{"unit", data.unit_ids()[static_cast<std::size_t>(comparison_rows[r])]},
                     {"weight", theta0(e)},
                     {"odds_weight", odds_weight(e)},
                     {"correction", correction(e)}});
  }
  return {{"design_columns", design.labels},
          {"n_treated", treated_rows.size()},
          {"comparison", units},
          {"flags", {{"negative_weight_count", negative_count}, {"min_weight", min_weight}}}};
}

// ---------------------------------------------------------------------------
// Aggregation

std::vector<std::pair<int, double>> treated_group_shares(const PanelDataset& data) {
  std::vector<std::pair<int, double>> out;
  double total = 0.0;
  for (int g : data.treated_groups()) {
    double s = 0.0;
    for (int i : data.units_in_group(g)) s += data.weight()(i);
    out.emplace_back(g, s);
    total += s;
  }
  if (!(total > 0.0)) throw EstimationError("no_treated", "no treated units");
  for (auto& [g, s] : out) s /= total;
  return out;
}

AggregateResult aggregate_overall(const std::vector<GroupTimeResult>& results, const PanelDataset& data) {
  std::map<std::pair<int, int>, double> att;
  for (const auto& r : results) att[{r.g, r.t}] = r.att;
  AggregateValue v;
  v.label = "overall";
  std::vector<std::string> missing;
  for (auto [g, pg] : treated_group_shares(data))
    for (int t = g; t <= data.T(); ++t) {
      auto it = att.find({g, t});
      if (it == att.end()) {
        missing.push_back("(" + data.group_label(g) + "," + std::to_string(data.period_label(t)) + ")");
        continue;
      }
      const double w = pg / (data.T() - g + 1);
      v.components.push_back({{g, t}, w});
      v.estimate += w * it->second;
    }
  if (!missing.empty()) {
    std::string msg = "missing group-time cells:";
    for (const auto& m : missing) msg += " " + m;
    throw EstimationError("missing_cells", msg);
  }
  return {"overall", {v}};
}

AggregateResult aggregate_event_study(const std::vector<GroupTimeResult>& results, const PanelDataset& data) {
  std::map<std::pair<int, int>, double> att;
  std::set<int> events;
  for (const auto& r : results) {
    att[{r.g, r.t}] = r.att;
    events.insert(r.t - r.g);
  }
  const auto shares = treated_group_shares(data);
  AggregateResult out{"event_study", {}};
  for (int e : events) {
    AggregateValue v;
    v.event_time = e;
    v.label = "e=" + std::to_string(e);
    double tot = 0.0;
    for (auto [g, pg] : shares)
      if (att.count({g, g + e})) tot += pg;
    for (auto [g, pg] : shares) {
      auto it = att.find({g, g + e});
      if (it == att.end()) continue;
      v.components.push_back({{g, g + e}, pg / tot});
      v.estimate += pg / tot * it->second;
    }
    out.values.push_back(std::move(v));
  }
  return out;
}

nlohmann::json AggregateResult::to_json(const PanelDataset& data) const {
  nlohmann::json vals = nlohmann::json::array();
  for (const auto& v : values) {
    nlohmann::json comp = nlohmann::json::array();
    for (const auto& [gt, w] : v.components)
      comp.push_back({{"g", data.period_label(gt.first)}, {"t", data.period_label(gt.second)}, {"weight", w}});
    nlohmann::json j = {{"label", v.label}, {"estimate", v.estimate},
                        {"se", v.se ? nlohmann::json(*v.se) : nlohmann::json(nullptr)}, {"weights", comp}};
    if (kind == "event_study") j["event_time"] = v.event_time;
    vals.push_back(j);
  }
  return {{"kind", kind}, {"values", vals}};
}

// ---------------------------------------------------------------------------
// Bootstrap

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over a combined state
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

BootstrapResult bootstrap_se(const EstimateFn& estimator, const PanelDataset& data, int reps, std::uint64_t seed,
                             int threads) {
  if (reps < 2) throw ValidationError("bad_option", "bootstrap needs at least 2 replications");
  const int n = data.n();
  std::vector<std::optional<Eigen::VectorXd>> out(static_cast<std::size_t>(reps));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < reps; r = next++) {
      std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
      std::uniform_int_distribution<int> pick(0, n - 1);
      std::vector<int> rows(static_cast<std::size_t>(n));
      for (auto& i : rows) i = pick(rng);
      std::sort(rows.begin(), rows.end());
      try {
        out[static_cast<std::size_t>(r)] = estimator(select_units(data, rows, true));
      } catch (const std::exception&) {
        out[static_cast<std::size_t>(r)].reset();
      }
    }
  };
  threads = std::max(1, std::min(threads, reps));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  BootstrapResult b;
  b.reps = reps;
  std::vector<Eigen::VectorXd> ok;
  for (auto& o : out) {
    if (o && o->allFinite())
      ok.push_back(*o);
    else
      ++b.failed;
  }
  if (2 * b.failed > reps || ok.size() < 2)
    throw EstimationError("bootstrap_unstable", "bootstrap unstable for this configuration (" +
                                                    std::to_string(b.failed) + " of " + std::to_string(reps) +
                                                    " replications failed)");
  const Eigen::Index m = ok.front().size();
  b.draws.resize(static_cast<Eigen::Index>(ok.size()), m);
  for (std::size_t r = 0; r < ok.size(); ++r) {
    if (ok[r].size() != m) throw EstimationError("bootstrap_shape", "bootstrap estimates changed length");
    b.draws.row(static_cast<Eigen::Index>(r)) = ok[r].transpose();
  }
  const Eigen::RowVectorXd mean = b.draws.colwise().mean();
  b.se = ((b.draws.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(ok.size() - 1))
             .sqrt()
             .transpose();
  return b;
}

}  // namespace ddiag
