#include "ddiag/twfe.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ddiag/error.hpp"
#include "ddiag/numcore.hpp"

namespace ddiag {

namespace {

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

Eigen::VectorXd repeat_weights(const Eigen::VectorXd& w, Eigen::Index T) {
  Eigen::VectorXd out(w.size() * T);
  for (Eigen::Index t = 0; t < T; ++t) out.segment(t * w.size(), w.size()) = w;
  return out;
}

void check_two_class(const TwoPeriodView& v) {
  const double s = v.treat.sum();
  if (s == 0.0 || s == static_cast<double>(v.n()))
    throw EstimationError("single_class", "TWFE needs both treated and untreated units");
  if (!v.has_outcome) throw ValidationError("missing_outcome", "TWFE needs outcomes");
}

// Residual of D on (1, dX) and the fitted projection.
std::pair<Eigen::VectorXd, Eigen::VectorXd> residualise_treat(const TwoPeriodView& v) {
  auto lp = linear_projection(v.dx, v.treat, v.weight, true, v.tv_names);
  Eigen::VectorXd lhat = lp.fitted(v.dx);
  Eigen::VectorXd e = v.treat - lhat;
  const double ss = (v.weight.array() * e.array().square()).sum() / v.weight.sum();
  if (!(ss > 1e-12)) throw EstimationError("no_treatment_variation", "no residual treatment variation");
  return {lhat, e};
}

double group_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& w, const std::vector<int>& rows) {
  double s = 0.0, sw = 0.0;
  for (int i : rows) {
    s += w(i) * x(i);
    sw += w(i);
  }
  return s / sw;
}

}  // namespace

// ---------------------------------------------------------------------------
// Two periods

TwfeFit fit_fd_twfe(const TwoPeriodView& v) {
  check_two_class(v);
  Eigen::MatrixXd design(v.n(), 1 + v.k());
  design.col(0) = v.treat;
  design.rightCols(v.k()) = v.dx;
  std::vector<std::string> labels{"treat"};
  labels.insert(labels.end(), v.tv_names.begin(), v.tv_names.end());
  auto lp = linear_projection(design, v.dy, v.weight, true, labels);
  TwfeFit f;
  f.alpha = lp.coefficients(1);
  f.beta = lp.coefficients.tail(v.k());
  f.labels = v.tv_names;
  f.n = v.n();
  f.T = 2;
  f.form = "first_difference";
  return f;
}

double fwl_alpha(const TwoPeriodView& v) {
  check_two_class(v);
  auto [lhat, e] = residualise_treat(v);
  const Eigen::ArrayXd we = v.weight.array() * e.array();
  return (we * v.dy.array()).sum() / (we * e.array()).sum();
}

TwoPeriodTwfeWeights two_period_implicit_weights(const TwoPeriodView& v) {
  check_two_class(v);
  auto [lhat, e] = residualise_treat(v);
  TwoPeriodTwfeWeights r;
  const double wsum = v.weight.sum();
  r.pi = v.treated_share();
  r.resid_var = (v.weight.array() * e.array().square()).sum() / wsum;
  r.lhat = lhat;
  r.treat = v.treat;
  r.weight.resize(v.n());
  for (int i = 0; i < v.n(); ++i) {
    if (v.treat(i) == 1.0) {
      r.weight(i) = r.pi * (1.0 - lhat(i)) / r.resid_var;
      if (r.weight(i) < 0.0) ++r.negative_treated;
    } else {
      r.weight(i) = (1.0 - r.pi) * lhat(i) / r.resid_var;
      if (r.weight(i) < 0.0) ++r.negative_untreated;
    }
  }
  const Eigen::ArrayXd we = v.weight.array() * e.array();
  r.alpha = (we * v.dy.array()).sum() / (we * e.array()).sum();
  return r;
}

nlohmann::json TwoPeriodTwfeWeights::to_json(const std::vector<std::string>& unit_ids) const {
  nlohmann::json w = nlohmann::json::array();
  for (Eigen::Index i = 0; i < weight.size(); ++i)
    w.push_back({{"unit", unit_ids[static_cast<std::size_t>(i)]},
                 {"treated", treat(i) == 1.0},
                 {"lhat", lhat(i)},
                 {"weight", weight(i)}});
  return {{"alpha", alpha},
          {"treated_share", pi},
          {"weights", w},
          {"flags", {{"negative_weight_count", negative_treated + negative_untreated},
                     {"negative_treated", negative_treated},
                     {"negative_untreated", negative_untreated}}}};
}

// ---------------------------------------------------------------------------
// Many periods

Eigen::MatrixXd within_transform(const PanelDataset& data, const Eigen::MatrixXd& m,
                                 const std::optional<std::string>& region) {
  if (!region) return double_demean(m, data.weight());
  const int j = data.ti_index(*region);
  if (j < 0) throw ValidationError("missing_column", "region column not among time-invariant covariates: " + *region);
  std::map<double, int> ids;
  std::vector<int> cluster(static_cast<std::size_t>(data.n()));
  for (int i = 0; i < data.n(); ++i) {
    auto [it, _] = ids.emplace(data.ti()(i, j), static_cast<int>(ids.size()));
    cluster[static_cast<std::size_t>(i)] = it->second;
  }
  return double_demean_within(m, data.weight(), cluster);
}

TwfeFit fit_fe_twfe(const PanelDataset& data, const std::optional<std::string>& region) {
  const int n = data.n(), T = data.T(), k = data.k();
  const Eigen::MatrixXd ydd = within_transform(data, data.outcome(), region);
  const Eigen::MatrixXd ddd = within_transform(data, data.treatment_matrix(), region);
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n) * T, 1 + k);
  design.col(0) = flatten(ddd);
  for (int j = 0; j < k; ++j) design.col(1 + j) = flatten(within_transform(data, data.tv(j), region));
  const Eigen::VectorXd wl = repeat_weights(data.weight(), T);

  // Residual treatment variation first, so that failure has a clear message.
  Eigen::VectorXd rho = design.col(0);
  if (k > 0) {
    auto g = projection_coefficients(design.rightCols(k), rho, wl, false, data.tv_names());
    rho -= design.rightCols(k) * g.col(0);
  }
  const double scale = std::max(1.0, (wl.array() * design.col(0).array().square()).sum());
  if (!((wl.array() * rho.array().square()).sum() > 1e-12 * scale))
    throw EstimationError("no_treatment_variation", "no residual treatment variation");

  std::vector<std::string> labels{"treat"};
  labels.insert(labels.end(), data.tv_names().begin(), data.tv_names().end());
  auto lp = linear_projection(design, flatten(ydd), wl, false, labels);
  TwfeFit f;
  f.alpha = lp.coefficients(0);
  f.beta = lp.coefficients.tail(k);
  f.labels = data.tv_names();
  f.n = n;
  f.T = T;
  f.form = "within";
  f.region = region;
  return f;
}

nlohmann::json TwfeFit::to_json() const {
  nlohmann::json b = nlohmann::json::object();
  for (std::size_t j = 0; j < labels.size(); ++j) b[labels[j]] = beta(static_cast<Eigen::Index>(j));
  nlohmann::json j = {{"alpha", alpha}, {"beta", b}, {"n", n}, {"T", T}, {"form", form}};
  if (region) j["region"] = *region;
  return j;
}

Eigen::MatrixXd twfe_h_table(const PanelDataset& data) {
  const int T = data.T();
  const auto groups = data.treated_groups();
  const Eigen::VectorXd& w = data.weight();
  const double wsum = w.sum();
  Eigen::VectorXd ed(T);
  const Eigen::MatrixXd d = data.treatment_matrix();
  for (int t = 0; t < T; ++t) ed(t) = w.dot(d.col(t)) / wsum;
  const double edbar = ed.mean();
  Eigen::MatrixXd h(static_cast<Eigen::Index>(groups.size()), T);
  for (std::size_t r = 0; r < groups.size(); ++r) {
    const int g = groups[r];
    for (int t = 1; t <= T; ++t)
      h(static_cast<Eigen::Index>(r), t - 1) =
          (t >= g ? 1.0 : 0.0) - static_cast<double>(T - g + 1) / T - ed(t - 1) + edbar;
  }
  return h;
}

MpTwfeWeights mp_weight_structure(const PanelDataset& data, const std::optional<std::string>& region) {
  const auto never = data.never_treated_units();
  if (never.empty())
    throw EstimationError("no_never_treated", "multi-period implicit weights require never-treated units");
  const int n = data.n(), T = data.T(), k = data.k();
  const Eigen::VectorXd& w = data.weight();
  const double wsum = w.sum();

  MpTwfeWeights r;
  r.has_outcome = false;
  const Eigen::MatrixXd ddd = within_transform(data, data.treatment_matrix(), region);
  r.rho = ddd;
  if (k > 0) {
    Eigen::MatrixXd xl(static_cast<Eigen::Index>(n) * T, k);
    std::vector<Eigen::MatrixXd> xdd;
    for (int j = 0; j < k; ++j) {
      xdd.push_back(within_transform(data, data.tv(j), region));
      xl.col(j) = flatten(xdd.back());
    }
    r.gamma = projection_coefficients(xl, flatten(ddd), repeat_weights(w, T), false, data.tv_names()).col(0);
    for (int j = 0; j < k; ++j) r.rho -= r.gamma(j) * xdd[static_cast<std::size_t>(j)];
  } else {
    r.gamma = Eigen::VectorXd(0);
  }
  r.h = twfe_h_table(data);
  r.groups = data.treated_groups();

  const std::size_t G = r.groups.size();
  r.group_share.resize(static_cast<Eigen::Index>(G) + 1);
  std::vector<std::vector<int>> members;
  for (std::size_t q = 0; q < G; ++q) {
    members.push_back(data.units_in_group(r.groups[q]));
    double s = 0.0;
    for (int i : members.back()) s += w(i);
    r.group_share(static_cast<Eigen::Index>(q)) = s / wsum;
  }
  double su = 0.0;
  for (int i : never) su += w(i);
  const double pi_u = su / wsum;
  r.group_share(static_cast<Eigen::Index>(G)) = pi_u;

  // Group means of rho by period.
  Eigen::MatrixXd mean_rho(static_cast<Eigen::Index>(G), T);
  Eigen::VectorXd mean_rho_u(T);
  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd col = r.rho.col(t);
    for (std::size_t q = 0; q < G; ++q) mean_rho(static_cast<Eigen::Index>(q), t) = group_mean(col, w, members[q]);
    mean_rho_u(t) = group_mean(col, w, never);
  }
  r.denom = 0.0;
  for (std::size_t q = 0; q < G; ++q)
    for (int t = r.groups[q]; t <= T; ++t)
      r.denom += r.group_share(static_cast<Eigen::Index>(q)) * mean_rho(static_cast<Eigen::Index>(q), t - 1);
  if (!(std::abs(r.denom) > 1e-12)) throw EstimationError("no_treatment_variation", "no residual treatment variation");

  for (std::size_t q = 0; q < G; ++q) {
    const int g = r.groups[q];
    const double pg = r.group_share(static_cast<Eigen::Index>(q));
    for (int t = 1; t <= T; ++t) {
      TwfeCell c;
      c.g = g;
      c.t = t;
      c.post = t >= g;
      c.treated_mean_rho = mean_rho(static_cast<Eigen::Index>(q), t - 1);
      c.sum_weight = pg * c.treated_mean_rho / r.denom;
      for (int i : members[q])
        if (r.rho(i, t - 1) * pg / r.denom < 0.0) ++c.negative_treated;
      const double scale = std::max(1e-300, r.rho.col(t - 1).cwiseAbs().maxCoeff());
      c.comparison_defined = std::abs(mean_rho_u(t - 1)) > 1e-12 * scale;
      if (c.comparison_defined)
        for (int i : never)
          if (r.rho(i, t - 1) / mean_rho_u(t - 1) < 0.0) ++c.negative_comparison;
      if (c.post) {
        r.post_sum += c.sum_weight;
        r.negative_count += c.negative_treated;
      } else {
        r.pre_sum += c.sum_weight;
      }
      r.cells.push_back(c);
    }
  }
  // Never-treated cells are all pre-treatment; their sum weights add to zero.
  for (int t = 0; t < T; ++t) r.pre_sum += pi_u * mean_rho_u(t) / r.denom;
  for (int t = 1; t <= T; ++t) {
    const bool bad = std::any_of(r.cells.begin(), r.cells.end(), [&](const TwfeCell& c) {
      return c.t == t && !c.comparison_defined && c.t != c.g - 1;
    });
    if (bad)
      r.warnings.push_back("never-treated mean of residualised treatment is zero in period " +
                           std::to_string(data.period_label(t)) + "; comparison weights undefined there, left in remainder");
  }
  return r;
}

MpTwfeWeights mp_implicit_weights(const PanelDataset& data, const TwfeFit& fit) {
  MpTwfeWeights r = mp_weight_structure(data, fit.region);
  const Eigen::MatrixXd& y = data.outcome();
  const Eigen::VectorXd& w = data.weight();
  const auto never = data.never_treated_units();
  r.has_outcome = true;
  r.alpha = fit.alpha;
  for (auto& c : r.cells) {
    if (c.t == c.g - 1) continue;  // zero path
    const auto members = data.units_in_group(c.g);
    const Eigen::VectorXd path = y.col(c.t - 1) - y.col(c.g - 2);
    const Eigen::VectorXd rp = r.rho.col(c.t - 1).cwiseProduct(path);
    const double pg = r.group_share(static_cast<Eigen::Index>(
        std::find(r.groups.begin(), r.groups.end(), c.g) - r.groups.begin()));
    c.treated_part = pg * group_mean(rp, w, members) / r.denom;
    const double mu = group_mean(r.rho.col(c.t - 1), w, never);
    c.comparison_part = c.comparison_defined ? c.sum_weight * group_mean(rp, w, never) / mu : 0.0;
    c.contribution = c.treated_part - c.comparison_part;
    (c.post ? r.post_contribution : r.pre_contribution) += c.contribution;
  }
  r.remainder = r.alpha - r.post_contribution - r.pre_contribution;
  r.alpha_pre_zeroed = r.alpha - r.pre_contribution;
  return r;
}

nlohmann::json MpTwfeWeights::to_json(const PanelDataset& data) const {
  nlohmann::json cellsj = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json j = {{"g", data.period_label(c.g)},
                        {"t", data.period_label(c.t)},
                        {"post", c.post},
                        {"sum_weight", c.sum_weight},
                        {"negative_treated", c.negative_treated},
                        {"negative_comparison", c.negative_comparison},
                        {"comparison_defined", c.comparison_defined}};
    if (has_outcome) {
      j["treated_part"] = c.treated_part;
      j["comparison_part"] = c.comparison_part;
      j["contribution"] = c.contribution;
    }
    cellsj.push_back(j);
  }
  nlohmann::json sums = {{"pre", pre_sum}, {"post", post_sum}};
  nlohmann::json j = {{"weights", cellsj}, {"flags", {{"negative_weight_count", negative_count}}}};
  if (has_outcome) {
    j["alpha"] = alpha;
    j["alpha_pre_zeroed"] = alpha_pre_zeroed;
    sums["pre_contribution"] = pre_contribution;
    sums["post_contribution"] = post_contribution;
    sums["remainder"] = remainder;
  }
  j["sums"] = sums;
  j["warnings"] = warnings;
  return j;
}

NeverTreatedProjection never_treated_projection(const PanelDataset& data) {
  const auto never = data.never_treated_units();
  if (never.empty()) throw EstimationError("no_never_treated", "no never-treated units");
  const PanelDataset u = select_units(data, never);
  const int T = u.T(), k = u.k();
  NeverTreatedProjection p;
  p.Lambda0 = Eigen::VectorXd::Zero(k);
  if (k > 0) {
    const Eigen::MatrixXd ydd = double_demean(u.outcome(), u.weight());
    Eigen::MatrixXd xl(static_cast<Eigen::Index>(u.n()) * T, k);
    for (int j = 0; j < k; ++j) xl.col(j) = flatten(double_demean(u.tv(j), u.weight()));
    p.Lambda0 = linear_projection(xl, flatten(ydd), repeat_weights(u.weight(), T), false, u.tv_names()).coefficients;
  }
  p.lambda.resize(T);
  const double ws = u.weight().sum();
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd r = u.outcome().col(t);
    for (int j = 0; j < k; ++j) r -= p.Lambda0(j) * u.tv(j).col(t);
    p.lambda(t) = u.weight().dot(r) / ws;
  }
  return p;
}

}  // namespace ddiag
