#include "ddiag/balance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "ddiag/error.hpp"
#include "ddiag/format.hpp"
#include "ddiag/numcore.hpp"

namespace ddiag {

namespace {

struct Side {
  double mean_raw = 0, var_raw = 0, mean_w = 0;
  bool ok = true;
};

Side side_stats(const Eigen::VectorXd& v, const std::vector<int>& rows, const Eigen::VectorXd& w_impl,
                const Eigen::VectorXd& s) {
  Side out;
  double ss = 0, sv = 0, sw = 0, swv = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double x = v(rows[r]);
    const double si = s(rows[r]);
    const double wi = si * w_impl(static_cast<Eigen::Index>(r));
    ss += si;
    sv += si * x;
    sw += wi;
    swv += wi * x;
  }
  out.mean_raw = sv / ss;
  double q = 0;
  for (int i : rows) q += s(i) * (v(i) - out.mean_raw) * (v(i) - out.mean_raw);
  out.var_raw = q / ss;
  if (std::abs(sw) > 1e-300) {
    out.mean_w = swv / sw;
  } else {
    out.mean_w = std::numeric_limits<double>::quiet_NaN();
    out.ok = false;
  }
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void finish_row(BalanceRow& row, double vt, double vc) {
  try {
    row.raw = std_diff(row.mean_treated_raw, vt, row.mean_comparison_raw, vc);
    row.weighted = std::isfinite(row.mean_treated_weighted) && std::isfinite(row.mean_comparison_weighted)
                       ? std_diff(row.mean_treated_weighted, vt, row.mean_comparison_weighted, vc)
                       : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(row.weighted)) row.degenerate = true;
  } catch (const NumericError&) {
    row.degenerate = true;
    row.raw = row.weighted = std::numeric_limits<double>::quiet_NaN();
  }
}

nlohmann::json num_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// Profiles

WeightProfile twfe_two_period_profile(const TwoPeriodView& v, const TwoPeriodTwfeWeights& w, int t_star_index) {
  BalanceScope s;
  s.g = s.t = t_star_index;
  s.base = t_star_index - 1;
  std::vector<double> wt, wc;
  for (int i = 0; i < v.n(); ++i) {
    if (v.treat(i) == 1.0) {
      s.treated.push_back(i);
      wt.push_back(w.weight(i));
    } else {
      s.comparison.push_back(i);
      wc.push_back(w.weight(i));
    }
  }
  s.w_treated = Eigen::Map<Eigen::VectorXd>(wt.data(), static_cast<Eigen::Index>(wt.size()));
  s.w_comparison = Eigen::Map<Eigen::VectorXd>(wc.data(), static_cast<Eigen::Index>(wc.size()));
  return {"twfe", {s}};
}

WeightProfile twfe_multi_period_profile(const PanelDataset& data, const MpTwfeWeights& w) {
  WeightProfile p{"twfe", {}};
  const auto never = data.never_treated_units();
  const auto shares = treated_group_shares(data);
  const Eigen::VectorXd& s = data.weight();
  auto mean_over = [&](const std::vector<int>& rows, int t) {
    double a = 0, b = 0;
    for (int i : rows) {
      a += s(i) * w.rho(i, t - 1);
      b += s(i);
    }
    return a / b;
  };
  for (auto [g, pg] : shares) {
    const auto members = data.units_in_group(g);
    for (int t = g; t <= data.T(); ++t) {
      BalanceScope sc;
      sc.g = g;
      sc.t = t;
      sc.base = g - 1;
      sc.treated = members;
      sc.comparison = never;
      const double mt = mean_over(members, t), mu = mean_over(never, t);
      sc.w_treated.resize(static_cast<Eigen::Index>(members.size()));
      for (std::size_t r = 0; r < members.size(); ++r)
        sc.w_treated(static_cast<Eigen::Index>(r)) = w.rho(members[r], t - 1) / mt;
      sc.w_comparison.resize(static_cast<Eigen::Index>(never.size()));
      for (std::size_t r = 0; r < never.size(); ++r)
        sc.w_comparison(static_cast<Eigen::Index>(r)) = w.rho(never[r], t - 1) / mu;
      sc.agg_weight = pg / (data.T() - g + 1);
      p.scopes.push_back(std::move(sc));
    }
  }
  return p;
}

WeightProfile drdid_profile(const PanelDataset& data, const CovariateSpec& spec, Estimator est,
                            const AttOptions& options) {
  WeightProfile p{to_string(est), {}};
  for (auto [g, pg] : treated_group_shares(data))
    for (int t = g; t <= data.T(); ++t) {
      auto r = att_gt_weights(data, spec, g, t, est, options);
      BalanceScope sc;
      sc.g = g;
      sc.t = t;
      sc.base = g - 1 - options.anticipation;
      sc.treated = r.treated_rows;
      sc.comparison = r.comparison_rows;
      sc.w_treated = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(r.treated_rows.size()));
      sc.w_comparison = r.theta0;
      sc.agg_weight = pg / (data.T() - g + 1);
      p.scopes.push_back(std::move(sc));
    }
  return p;
}

WeightProfile uniform_profile(const WeightProfile& like) {
  WeightProfile p = like;
  p.estimator = "unweighted";
  for (auto& s : p.scopes) {
    s.w_treated.setOnes();
    s.w_comparison.setOnes();
  }
  return p;
}

// ---------------------------------------------------------------------------
// Functionals

std::string Functional::label() const {
  switch (kind) {
    case FunctionalKind::change: return "d_" + covariate;
    case FunctionalKind::level_base: return covariate + "_base";
    case FunctionalKind::level_t: return covariate + "_post";
    case FunctionalKind::level_at: return covariate + "@" + std::to_string(period_label);
    case FunctionalKind::average: return covariate + "_avg";
    case FunctionalKind::ti: return covariate;
    case FunctionalKind::indicator: return covariate + ">=" + format_double(threshold);
  }
  return covariate;
}

Functional Functional::parse(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ValidationError("bad_functional", "functional needs a kind prefix: " + s);
  const std::string kind = s.substr(0, colon), rest = s.substr(colon + 1);
  Functional f;
  f.covariate = rest;
  if (kind == "change") f.kind = FunctionalKind::change;
  else if (kind == "base") f.kind = FunctionalKind::level_base;
  else if (kind == "post") f.kind = FunctionalKind::level_t;
  else if (kind == "avg") f.kind = FunctionalKind::average;
  else if (kind == "ti") f.kind = FunctionalKind::ti;
  else if (kind == "at") {
    const auto c2 = rest.rfind(':');
    if (c2 == std::string::npos) throw ValidationError("bad_functional", "expected at:<covariate>:<period>: " + s);
    f.kind = FunctionalKind::level_at;
    f.covariate = rest.substr(0, c2);
    f.period_label = std::stoi(rest.substr(c2 + 1));
  } else if (kind == "ind") {
    const auto ge = rest.find(">=");
    if (ge == std::string::npos) throw ValidationError("bad_functional", "expected ind:<covariate>>=<value>: " + s);
    f.kind = FunctionalKind::indicator;
    f.covariate = rest.substr(0, ge);
    f.threshold = std::stod(rest.substr(ge + 2));
  } else {
    throw ValidationError("bad_functional", "unknown functional kind: " + kind);
  }
  return f;
}

std::vector<Functional> default_functionals(const PanelDataset& data) {
  std::vector<Functional> out;
  for (const auto& x : data.tv_names()) {
    out.push_back({FunctionalKind::change, x});
    out.push_back({FunctionalKind::level_base, x});
    out.push_back({FunctionalKind::level_t, x});
  }
  for (const auto& z : data.ti_names()) out.push_back({FunctionalKind::ti, z});
  return out;
}

namespace {

Eigen::VectorXd functional_values(const PanelDataset& data, const Functional& f, const BalanceScope& s) {
  if (f.kind == FunctionalKind::ti || (f.kind == FunctionalKind::indicator && data.tv_index(f.covariate) < 0)) {
    const int j = data.ti_index(f.covariate);
    if (j < 0) throw ValidationError("missing_column", "unknown covariate in functional: " + f.covariate);
    Eigen::VectorXd z = data.ti().col(j);
    if (f.kind == FunctionalKind::indicator) z = (z.array() >= f.threshold).cast<double>();
    return z;
  }
  const int j = data.tv_index(f.covariate);
  if (j < 0) throw ValidationError("missing_column", "unknown time-varying covariate in functional: " + f.covariate);
  const Eigen::MatrixXd& x = data.tv(j);
  switch (f.kind) {
    case FunctionalKind::change: return x.col(s.t - 1) - x.col(s.base - 1);
    case FunctionalKind::level_base: return x.col(s.base - 1);
    case FunctionalKind::level_t: return x.col(s.t - 1);
    case FunctionalKind::level_at: return x.col(data.period_index(f.period_label) - 1);
    case FunctionalKind::average: return x.rowwise().mean();
    case FunctionalKind::indicator: return (x.col(s.base - 1).array() >= f.threshold).cast<double>();
    case FunctionalKind::ti: break;
  }
  return {};
}

}  // namespace

// ---------------------------------------------------------------------------
// Report

BalanceReport balance_report(const WeightProfile& profile, const PanelDataset& data,
                             const std::vector<Functional>& functionals) {
  if (profile.scopes.empty()) throw ValidationError("empty_profile", "weight profile has no scopes");
  if (functionals.empty()) throw ValidationError("empty_functionals", "no covariate functionals requested");
  BalanceReport rep;
  rep.estimator = profile.estimator;
  const Eigen::VectorXd& s = data.weight();
  double agg_total = 0;
  for (const auto& sc : profile.scopes) agg_total += sc.agg_weight;

  for (const auto& f : functionals) {
    BalanceRow agg;
    agg.label = f.label();
    double vt = 0, vc = 0;
    for (const auto& sc : profile.scopes) {
      const Eigen::VectorXd v = functional_values(data, f, sc);
      const Side t = side_stats(v, sc.treated, sc.w_treated, s);
      const Side c = side_stats(v, sc.comparison, sc.w_comparison, s);
      const double a = sc.agg_weight / agg_total;
      agg.mean_treated_raw += a * t.mean_raw;
      agg.mean_comparison_raw += a * c.mean_raw;
      agg.mean_treated_weighted += a * t.mean_w;
      agg.mean_comparison_weighted += a * c.mean_w;
      vt += a * t.var_raw;
      vc += a * c.var_raw;
      if (profile.scopes.size() > 1) {
        BalanceRow b;
        b.label = agg.label;
        b.cell = std::make_pair(sc.g, sc.t);
        b.mean_treated_raw = t.mean_raw;
        b.mean_comparison_raw = c.mean_raw;
        b.mean_treated_weighted = t.mean_w;
        b.mean_comparison_weighted = c.mean_w;
        finish_row(b, t.var_raw, c.var_raw);
        rep.breakdown.push_back(b);
      }
    }
    finish_row(agg, vt, vc);
    rep.rows.push_back(agg);
  }

  // ESS on per-unit weights accumulated across scopes.
  Eigen::VectorXd ut = Eigen::VectorXd::Zero(data.n()), uc = Eigen::VectorXd::Zero(data.n());
  for (const auto& sc : profile.scopes) {
    const double a = sc.agg_weight / agg_total;
    auto add = [&](Eigen::VectorXd& acc, const std::vector<int>& rows, const Eigen::VectorXd& w) {
      double tot = 0;
      for (std::size_t r = 0; r < rows.size(); ++r) tot += s(rows[r]) * w(static_cast<Eigen::Index>(r));
      for (std::size_t r = 0; r < rows.size(); ++r)
        acc(rows[r]) += a * s(rows[r]) * w(static_cast<Eigen::Index>(r)) / tot;
    };
    add(ut, sc.treated, sc.w_treated);
    add(uc, sc.comparison, sc.w_comparison);
  }
  rep.ess_treated = ut.squaredNorm() > 0 ? kish_ess(ut) : 0.0;
  rep.ess_comparison = uc.squaredNorm() > 0 ? kish_ess(uc) : 0.0;
  rep.negative_treated = negative_weight_summary(profile, data, true);
  rep.negative_comparison = negative_weight_summary(profile, data, false);
  return rep;
}

NegativeWeightSummary negative_weight_summary(const Eigen::VectorXd& weights, const std::vector<std::string>& ids) {
  NegativeWeightSummary out;
  if (weights.size() == 0) return out;
  out.min_weight = weights.minCoeff();
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (weights(i) < 0.0) {
      ++out.count;
      if (static_cast<std::size_t>(i) < ids.size()) out.unit_ids.push_back(ids[static_cast<std::size_t>(i)]);
    }
  out.share = static_cast<double>(out.count) / static_cast<double>(weights.size());
  return out;
}

NegativeWeightSummary negative_weight_summary(const WeightProfile& profile, const PanelDataset& data, bool treated) {
  NegativeWeightSummary out;
  std::set<int> units;
  std::size_t total = 0;
  out.min_weight = std::numeric_limits<double>::infinity();
  for (const auto& sc : profile.scopes) {
    const auto& rows = treated ? sc.treated : sc.comparison;
    const auto& w = treated ? sc.w_treated : sc.w_comparison;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double x = w(static_cast<Eigen::Index>(r));
      out.min_weight = std::min(out.min_weight, x);
      if (x < 0.0) {
        ++out.count;
        units.insert(rows[r]);
      }
    }
    total += rows.size();
  }
  if (total == 0) out.min_weight = 0.0;
  out.share = total ? static_cast<double>(out.count) / static_cast<double>(total) : 0.0;
  for (int i : units) out.unit_ids.push_back(data.unit_ids()[static_cast<std::size_t>(i)]);
  return out;
}

nlohmann::json NegativeWeightSummary::to_json() const {
  return {{"count", count}, {"share", share}, {"min_weight", min_weight}, {"units", unit_ids}};
}

nlohmann::json BalanceReport::to_json(const PanelDataset& data) const {
  auto row_json = [&](const BalanceRow& r) {
    nlohmann::json j = {{"covariate", r.label},
                        {"mean_treated", r.mean_treated_raw},
                        {"mean_comparison", r.mean_comparison_raw},
                        {"mean_treated_weighted", num_or_null(r.mean_treated_weighted)},
                        {"mean_comparison_weighted", num_or_null(r.mean_comparison_weighted)},
                        {"std_diff_raw", num_or_null(r.raw)},
                        {"std_diff_weighted", num_or_null(r.weighted)},
                        {"degenerate", r.degenerate}};
    if (r.cell) {
      j["g"] = data.period_label(r.cell->first);
      j["t"] = data.period_label(r.cell->second);
    }
    return j;
  };
  nlohmann::json rowsj = nlohmann::json::array(), bj = nlohmann::json::array();
  for (const auto& r : rows) rowsj.push_back(row_json(r));
  for (const auto& r : breakdown) bj.push_back(row_json(r));
  return {{"estimator", estimator},
          {"rows", rowsj},
          {"breakdown", bj},
          {"ess_treated", ess_treated},
          {"ess_comparison", ess_comparison},
          {"negative_weights", {{"treated", negative_treated.to_json()}, {"comparison", negative_comparison.to_json()}}}};
}

std::string BalanceReport::to_csv(const PanelDataset& data) const {
  std::ostringstream os;
  os << "estimator,g,t,covariate,mean_treated,mean_comparison,mean_treated_weighted,mean_comparison_weighted,"
        "std_diff_raw,std_diff_weighted\n";
  auto put = [&](const BalanceRow& r) {
    os << estimator << ",";
    if (r.cell)
      os << data.period_label(r.cell->first) << "," << data.period_label(r.cell->second);
    else
      os << "all,all";
    os << "," << r.label << "," << format_double(r.mean_treated_raw) << "," << format_double(r.mean_comparison_raw)
       << "," << format_double(r.mean_treated_weighted) << "," << format_double(r.mean_comparison_weighted) << ","
       << format_double(r.raw) << "," << format_double(r.weighted) << "\n";
  };
  for (const auto& r : rows) put(r);
  for (const auto& r : breakdown) put(r);
  return os.str();
}

// ---------------------------------------------------------------------------
// Love plot

std::string love_plot_svg(const BalanceReport& report, const LovePlotOptions& opt) {
  std::vector<const BalanceRow*> rows;
  for (const auto& r : report.rows) rows.push_back(&r);
  if (opt.include_breakdown)
    for (const auto& r : report.breakdown) rows.push_back(&r);
  if (rows.empty()) throw ValidationError("empty_report", "balance report has no rows to plot");

  double span = 0.5;
  for (const auto* r : rows) {
    if (std::isfinite(r->raw)) span = std::max(span, std::abs(r->raw) * 1.1);
    if (std::isfinite(r->weighted)) span = std::max(span, std::abs(r->weighted) * 1.1);
  }
  const int left = 200, right = 30, top = opt.title.empty() ? 30 : 50, row_h = 22;
  const int plot_w = std::max(200, opt.width - left - right);
  const int height = top + row_h * static_cast<int>(rows.size()) + 60;
  auto xpos = [&](double v) { return left + (v + span) / (2 * span) * plot_w; };
  auto fx = [](double v) { return format_fixed(v, 2); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opt.title.empty())
    os << "<text x=\"" << opt.width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
       << xml_escape(opt.title) << "</text>\n";
  const int y0 = top, y1 = top + row_h * static_cast<int>(rows.size());
  os << "<line x1=\"" << fx(xpos(0)) << "\" y1=\"" << y0 << "\" x2=\"" << fx(xpos(0)) << "\" y2=\"" << y1
     << "\" stroke=\"black\"/>\n";
  for (double ref : {0.1, 0.3})
    for (double sgn : {-1.0, 1.0}) {
      const double v = sgn * ref;
      if (std::abs(v) > span) continue;
      os << "<line class=\"ref\" x1=\"" << fx(xpos(v)) << "\" y1=\"" << y0 << "\" x2=\"" << fx(xpos(v))
         << "\" y2=\"" << y1 << "\" stroke=\"gray\" stroke-dasharray=\"" << (ref < 0.2 ? "4,3" : "1,3") << "\"/>\n";
    }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto* r = rows[k];
    const int y = top + row_h * static_cast<int>(k) + row_h / 2;
    std::string label = r->label;
    if (r->cell) label += " (" + std::to_string(r->cell->first) + "," + std::to_string(r->cell->second) + ")";
    os << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << xml_escape(label)
       << "</text>\n";
    if (std::isfinite(r->raw))
      os << "<circle class=\"raw\" cx=\"" << fx(xpos(r->raw)) << "\" cy=\"" << y
         << "\" r=\"4\" fill=\"none\" stroke=\"black\"/>\n";
    if (std::isfinite(r->weighted))
      os << "<circle class=\"weighted\" cx=\"" << fx(xpos(r->weighted)) << "\" cy=\"" << y
         << "\" r=\"4\" fill=\"steelblue\"/>\n";
  }
  // axis
  os << "<line x1=\"" << left << "\" y1=\"" << y1 << "\" x2=\"" << left + plot_w << "\" y2=\"" << y1
     << "\" stroke=\"black\"/>\n";
  for (double v : {-span, -0.3, -0.1, 0.0, 0.1, 0.3, span}) {
    if (std::abs(v) > span) continue;
    os << "<text x=\"" << fx(xpos(v)) << "\" y=\"" << y1 + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << fx(v) << "</text>\n";
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << y1 + 34
     << "\" text-anchor=\"middle\">standardized difference</text>\n";
  os << "<circle cx=\"" << left << "\" cy=\"" << y1 + 48 << "\" r=\"4\" fill=\"none\" stroke=\"black\"/>"
     << "<text x=\"" << left + 8 << "\" y=\"" << y1 + 52 << "\">unweighted</text>\n";
  os << "<circle cx=\"" << left + 100 << "\" cy=\"" << y1 + 48 << "\" r=\"4\" fill=\"steelblue\"/>"
     << "<text x=\"" << left + 108 << "\" y=\"" << y1 + 52 << "\">" << xml_escape(report.estimator)
     << " weights</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace ddiag
