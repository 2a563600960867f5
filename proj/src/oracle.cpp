#include "ddiag/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ddiag/error.hpp"

namespace ddiag::oracle {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError("bad_dgp", msg);
}

Eigen::VectorXd vec_from(const nlohmann::json& j, std::size_t n, const std::string& what) {
  require(j.is_array() && j.size() == n, what + " must have " + std::to_string(n) + " entries");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

nlohmann::json vec_to(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    require(allowed.count(it.key()) > 0, "unknown key in " + where + ": " + it.key());
}

// Covariate key on a 1e-9 grid.
std::string key_of(const std::vector<double>& v) {
  std::string s;
  for (double x : v) {
    s += std::to_string(std::llround(x * 1e9));
    s += '|';
  }
  return s;
}

// Mass-weighted least squares through the normal equations.
Eigen::VectorXd pop_ls(const Eigen::MatrixXd& a, const Eigen::VectorXd& y, const Eigen::VectorXd& mass) {
  const Eigen::MatrixXd xtx = a.transpose() * mass.asDiagonal() * a;
  const Eigen::VectorXd xty = a.transpose() * mass.cwiseProduct(y);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-13)
    throw EstimationError("degenerate_population", "population moment matrix is singular");
  return ldlt.solve(xty);
}

// Population double demeaning of a rows x T matrix.
Eigen::MatrixXd pop_demean(const Eigen::MatrixXd& m, const Eigen::VectorXd& mass) {
  const double tot = mass.sum();
  const Eigen::RowVectorXd colmean = (mass.transpose() * m) / tot;
  const double grand = colmean.mean();
  Eigen::MatrixXd out = m;
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.row(r) = m.row(r) - colmean - Eigen::RowVectorXd::Constant(m.cols(), m.row(r).mean() - grand);
  return out;
}

struct KeyedMean {
  std::map<std::string, std::pair<double, double>> acc;  // key -> (sum mass*v, sum mass)
  void add(const std::string& k, double mass, double v) {
    auto& a = acc[k];
    a.first += mass * v;
    a.second += mass;
  }
  double at(const std::string& k) const {
    auto it = acc.find(k);
    if (it == acc.end() || !(it->second.second > 0))
      throw EstimationError("empty_stratum", "empty conditioning stratum among comparison units (overlap fails)");
    return it->second.first / it->second.second;
  }
};

std::vector<double> history_key(const PopRow& r, bool with_z) {
  std::vector<double> v(r.x.data(), r.x.data() + r.x.size());
  if (with_z) v.insert(v.end(), r.z.data(), r.z.data() + r.z.size());
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// DGP JSON

DiscreteDgp DiscreteDgp::from_json(const nlohmann::json& j) {
  require(j.is_object(), "DGP must be a JSON object");
  check_keys(j, {"name", "description", "T", "tv", "ti", "groups", "untreated_shift", "noise_sd", "unit_effect_sd", "cells"},
             "DGP");
  DiscreteDgp d;
  d.name = j.value("name", "");
  d.T = j.at("T").get<int>();
  require(d.T >= 2, "T must be at least 2");
  if (j.contains("tv")) d.tv_names = j.at("tv").get<std::vector<std::string>>();
  if (j.contains("ti")) d.ti_names = j.at("ti").get<std::vector<std::string>>();
  d.groups = j.at("groups").get<std::vector<int>>();
  d.noise_sd = j.value("noise_sd", 1.0);
  d.unit_effect_sd = j.value("unit_effect_sd", 0.0);
  const auto T = static_cast<std::size_t>(d.T);
  if (j.contains("untreated_shift"))
    for (auto it = j.at("untreated_shift").begin(); it != j.at("untreated_shift").end(); ++it)
      d.untreated_shift[std::stoi(it.key())] = vec_from(it.value(), T, "untreated_shift");
  for (const auto& cj : j.at("cells")) {
    check_keys(cj, {"prob", "x", "z", "group_probs", "m0", "tau", "unit_effect"}, "cell");
    Cell c;
    c.prob = cj.at("prob").get<double>();
    c.x.resize(d.T, d.k());
    if (d.k() > 0) {
      const auto& xj = cj.at("x");
      require(xj.is_array() && xj.size() == T, "cell x must have one row per period");
      for (std::size_t t = 0; t < T; ++t)
        c.x.row(static_cast<Eigen::Index>(t)) = vec_from(xj[t], static_cast<std::size_t>(d.k()), "cell x row");
    }
    c.z = d.l() > 0 ? vec_from(cj.at("z"), static_cast<std::size_t>(d.l()), "cell z") : Eigen::VectorXd(0);
    c.group_probs = cj.at("group_probs").get<std::vector<double>>();
    c.m0 = vec_from(cj.at("m0"), T, "cell m0");
    if (cj.contains("tau"))
      for (auto it = cj.at("tau").begin(); it != cj.at("tau").end(); ++it)
        c.tau[std::stoi(it.key())] = vec_from(it.value(), T, "cell tau");
    c.unit_effect = cj.value("unit_effect", 0.0);
    d.cells.push_back(std::move(c));
  }
  return d;
}

nlohmann::json DiscreteDgp::to_json() const {
  nlohmann::json cellsj = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json xj = nlohmann::json::array();
    for (int t = 0; t < T; ++t) xj.push_back(vec_to(c.x.row(t).transpose()));
    nlohmann::json tau = nlohmann::json::object();
    for (const auto& [g, v] : c.tau) tau[std::to_string(g)] = vec_to(v);
    nlohmann::json cj = {{"prob", c.prob}, {"group_probs", c.group_probs}, {"m0", vec_to(c.m0)}, {"tau", tau},
                         {"unit_effect", c.unit_effect}};
    if (k() > 0) cj["x"] = xj;
    if (l() > 0) cj["z"] = vec_to(c.z);
    cellsj.push_back(cj);
  }
  nlohmann::json shift = nlohmann::json::object();
  for (const auto& [g, v] : untreated_shift) shift[std::to_string(g)] = vec_to(v);
  return {{"name", name}, {"T", T}, {"tv", tv_names}, {"ti", ti_names}, {"groups", groups},
          {"untreated_shift", shift}, {"noise_sd", noise_sd}, {"unit_effect_sd", unit_effect_sd}, {"cells", cellsj}};
}

DiscreteDgp DiscreteDgp::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("io", "cannot open DGP file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad_dgp", std::string("invalid DGP JSON: ") + e.what());
  }
  auto d = from_json(j);
  if (d.name.empty()) d.name = path.stem().string();
  return d;
}

double PopulationTable::group_mass(int g) const {
  double m = 0.0;
  for (const auto& r : rows)
    if (r.group == g) m += r.mass;
  return m;
}

// ---------------------------------------------------------------------------
// Enumeration

PopulationTable enumerate_population(const DiscreteDgp& d) {
  require(!d.cells.empty(), "DGP has no cells");
  require(!d.groups.empty(), "DGP has no groups");
  for (std::size_t q = 0; q < d.groups.size(); ++q) {
    require(d.groups[q] >= 2 && d.groups[q] <= d.T + 1, "group out of range: " + std::to_string(d.groups[q]));
    if (q > 0) require(d.groups[q] > d.groups[q - 1], "groups must be strictly increasing");
  }
  for (const auto& [g, v] : d.untreated_shift)
    require(std::find(d.groups.begin(), d.groups.end(), g) != d.groups.end() && g <= d.T,
            "untreated_shift may only name treated groups");
  double total = 0.0;
  std::set<std::string> keys;
  PopulationTable tab;
  tab.T = d.T;
  tab.k = d.k();
  tab.l = d.l();
  tab.groups = d.groups;
  for (std::size_t c = 0; c < d.cells.size(); ++c) {
    const Cell& cell = d.cells[c];
    require(cell.prob >= 0.0, "negative cell probability");
    require(cell.group_probs.size() == d.groups.size(), "group_probs must align with groups");
    double gs = 0.0;
    for (double p : cell.group_probs) {
      require(p >= 0.0 && p <= 1.0, "group probability outside [0,1]");
      gs += p;
    }
    require(std::abs(gs - 1.0) < 1e-9, "group probabilities of a cell must sum to 1");
    total += cell.prob;
    PopRow probe;
    probe.x = cell.x;
    probe.z = cell.z;
    require(keys.insert(key_of(history_key(probe, true))).second, "cells must have distinct covariate values");
    for (std::size_t q = 0; q < d.groups.size(); ++q) {
      const double mass = cell.prob * cell.group_probs[q];
      if (!(mass > 0.0)) continue;
      const int g = d.groups[q];
      PopRow r;
      r.cell = static_cast<int>(c);
      r.group = g;
      r.mass = mass;
      r.x = cell.x;
      r.z = cell.z;
      r.y0 = cell.m0.array() + cell.unit_effect;
      r.shift = Eigen::VectorXd::Zero(d.T);
      if (auto it = d.untreated_shift.find(g); it != d.untreated_shift.end()) r.shift = it->second;
      r.effect = Eigen::VectorXd::Zero(d.T);
      if (g <= d.T) {
        auto it = cell.tau.find(g);
        if (it != cell.tau.end())
          for (int t = g; t <= d.T; ++t) r.effect(t - 1) = it->second(t - 1);
      }
      r.y = r.y0 + r.shift + r.effect;
      tab.rows.push_back(std::move(r));
    }
  }
  require(std::abs(total - 1.0) < 1e-9, "cell probabilities must sum to 1");
  for (int g : d.groups) require(tab.group_mass(g) > 0.0, "group " + std::to_string(g) + " has zero mass");
  return tab;
}

PanelDataset to_weighted_panel(const PopulationTable& tab) {
  PanelParts p;
  const auto n = static_cast<Eigen::Index>(tab.rows.size());
  for (int t = 1; t <= tab.T; ++t) p.periods.push_back(t);
  Eigen::MatrixXd y(n, tab.T);
  p.tv.assign(static_cast<std::size_t>(tab.k), Eigen::MatrixXd(n, tab.T));
  p.ti.resize(n, tab.l);
  p.weight.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = tab.rows[static_cast<std::size_t>(r)];
    p.unit_ids.push_back("c" + std::to_string(row.cell) + "g" + std::to_string(row.group));
    p.group.push_back(row.group);
    y.row(r) = row.y.transpose();
    for (int j = 0; j < tab.k; ++j) p.tv[static_cast<std::size_t>(j)].row(r) = row.x.col(j).transpose();
    if (tab.l > 0) p.ti.row(r) = row.z.transpose();
    p.weight(r) = row.mass;
  }
  p.outcome = y;
  for (int j = 0; j < tab.k; ++j) p.tv_names.push_back("x" + std::to_string(j + 1));
  for (int j = 0; j < tab.l; ++j) p.ti_names.push_back("z" + std::to_string(j + 1));
  return PanelDataset(std::move(p));
}

// ---------------------------------------------------------------------------
// Truth

Truth truth_att(const PopulationTable& tab) {
  Truth tr;
  double treated_mass = 0.0;
  std::map<int, double> gm;
  for (int g : tab.groups)
    if (g <= tab.T) {
      gm[g] = tab.group_mass(g);
      treated_mass += gm[g];
    }
  for (auto [g, m] : gm)
    for (int t = g; t <= tab.T; ++t) {
      double s = 0.0;
      for (const auto& r : tab.rows)
        if (r.group == g) s += r.mass * r.effect(t - 1);
      tr.att_gt[{g, t}] = s / m;
      tr.att_overall += (m / treated_mass) / (tab.T - g + 1) * (s / m);
    }
  if (!gm.empty()) tr.att = tr.att_gt[{gm.begin()->first, tab.T}];
  for (const auto& r : tab.rows) tr.conditional_att.push_back(r.group <= tab.T ? r.effect(tab.T - 1) : 0.0);
  return tr;
}

// ---------------------------------------------------------------------------
// Alpha

namespace {

struct Stacked {
  Eigen::VectorXd mass;
  Eigen::MatrixXd y, d;
  std::vector<Eigen::MatrixXd> x;  // per covariate rows x T
};

Stacked stack(const PopulationTable& tab, const std::vector<std::size_t>& idx) {
  Stacked s;
  const auto n = static_cast<Eigen::Index>(idx.size());
  s.mass.resize(n);
  s.y.resize(n, tab.T);
  s.d.resize(n, tab.T);
  s.x.assign(static_cast<std::size_t>(tab.k), Eigen::MatrixXd(n, tab.T));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = tab.rows[idx[static_cast<std::size_t>(r)]];
    s.mass(r) = row.mass;
    s.y.row(r) = row.y.transpose();
    for (int t = 1; t <= tab.T; ++t) s.d(r, t - 1) = t >= row.group ? 1.0 : 0.0;
    for (int j = 0; j < tab.k; ++j) s.x[static_cast<std::size_t>(j)].row(r) = row.x.col(j).transpose();
  }
  return s;
}

std::vector<std::size_t> all_rows(const PopulationTable& tab) {
  std::vector<std::size_t> v(tab.rows.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

// Long (rows*T) stacking of demeaned matrices into regressors.
Eigen::MatrixXd long_design(const std::vector<Eigen::MatrixXd>& mats) {
  if (mats.empty()) return {};
  const Eigen::Index n = mats[0].rows(), T = mats[0].cols();
  Eigen::MatrixXd a(n * T, static_cast<Eigen::Index>(mats.size()));
  for (std::size_t j = 0; j < mats.size(); ++j)
    for (Eigen::Index t = 0; t < T; ++t) a.col(static_cast<Eigen::Index>(j)).segment(t * n, n) = mats[j].col(t);
  return a;
}

Eigen::VectorXd long_mass(const Eigen::VectorXd& m, Eigen::Index T) {
  Eigen::VectorXd out(m.size() * T);
  for (Eigen::Index t = 0; t < T; ++t) out.segment(t * m.size(), m.size()) = m;
  return out;
}

}  // namespace

double population_alpha(const PopulationTable& tab, bool two_period) {
  if (two_period) {
    require(tab.T == 2, "two-period alpha needs T = 2");
    const auto n = static_cast<Eigen::Index>(tab.rows.size());
    Eigen::MatrixXd a(n, 2 + tab.k);
    Eigen::VectorXd dy(n), mass(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& row = tab.rows[static_cast<std::size_t>(r)];
      a(r, 0) = 1.0;
      a(r, 1) = row.group == 2 ? 1.0 : 0.0;
      for (int j = 0; j < tab.k; ++j) a(r, 2 + j) = row.x(1, j) - row.x(0, j);
      dy(r) = row.y(1) - row.y(0);
      mass(r) = row.mass;
    }
    return pop_ls(a, dy, mass)(1);
  }
  const Stacked s = stack(tab, all_rows(tab));
  std::vector<Eigen::MatrixXd> regs{pop_demean(s.d, s.mass)};
  for (const auto& x : s.x) regs.push_back(pop_demean(x, s.mass));
  const Eigen::MatrixXd a = long_design(regs);
  const Eigen::VectorXd y = long_design({pop_demean(s.y, s.mass)}).col(0);
  return pop_ls(a, y, long_mass(s.mass, tab.T))(0);
}

// ---------------------------------------------------------------------------
// Two-period decomposition

TwoPeriodDecomposition theorem1_decomposition(const PopulationTable& tab) {
  require(tab.T == 2, "the two-period decomposition needs T = 2");
  for (int g : tab.groups) require(g == 2 || g == 3, "the two-period decomposition needs groups {2, never}");
  const auto n = static_cast<Eigen::Index>(tab.rows.size());
  Eigen::MatrixXd a(n, 1 + tab.k);
  Eigen::VectorXd d(n), dy(n), mass(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = tab.rows[static_cast<std::size_t>(r)];
    a(r, 0) = 1.0;
    for (int j = 0; j < tab.k; ++j) a(r, 1 + j) = row.x(1, j) - row.x(0, j);
    d(r) = row.group == 2 ? 1.0 : 0.0;
    dy(r) = row.y(1) - row.y(0);
    mass(r) = row.mass;
  }
  const Eigen::VectorXd lhat = a * pop_ls(a, d, mass);

  // Projection of dY on dX among untreated.
  const Eigen::VectorXd m0 = mass.cwiseProduct((1.0 - d.array()).matrix());
  const Eigen::VectorXd l0 = a * pop_ls(a, dy, m0);

  KeyedMean full, levels, change;
  auto keys = [&](const PopRow& row) {
    std::vector<double> lv(row.x.data(), row.x.data() + row.x.size());
    std::vector<double> fv = lv;
    fv.insert(fv.end(), row.z.data(), row.z.data() + row.z.size());
    std::vector<double> cv;
    for (int j = 0; j < tab.k; ++j) cv.push_back(row.x(1, j) - row.x(0, j));
    return std::make_tuple(key_of(fv), key_of(lv), key_of(cv));
  };
  for (Eigen::Index r = 0; r < n; ++r) {
    if (d(r) == 1.0) continue;
    const auto& row = tab.rows[static_cast<std::size_t>(r)];
    auto [kf, kl, kc] = keys(row);
    full.add(kf, row.mass, dy(r));
    levels.add(kl, row.mass, dy(r));
    change.add(kc, row.mass, dy(r));
  }

  TwoPeriodDecomposition out;
  double m1 = 0.0, mean1l = 0.0;
  for (Eigen::Index r = 0; r < n; ++r)
    if (d(r) == 1.0) {
      m1 += mass(r);
      mean1l += mass(r) * (1.0 - lhat(r));
    }
  mean1l /= m1;
  out.weights.assign(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index r = 0; r < n; ++r) {
    if (d(r) != 1.0) continue;
    const auto& row = tab.rows[static_cast<std::size_t>(r)];
    const double w = (1.0 - lhat(r)) / mean1l;
    out.weights[static_cast<std::size_t>(r)] = w;
    auto [kf, kl, kc] = keys(row);
    const double ef = full.at(kf), el = levels.at(kl), ec = change.at(kc);
    const double q = row.mass / m1;
    out.weight_mean_treated += q * w;
    out.weighted_catt += q * w * row.effect(1);
    out.termA += q * w * (ef - el);
    out.termB += q * w * (el - ec);
    out.termC += q * w * (ec - l0(r));
  }
  out.alpha = population_alpha(tab, true);
  out.closure_error = std::abs(out.weighted_catt + out.termA + out.termB + out.termC - out.alpha);
  return out;
}

// ---------------------------------------------------------------------------
// Staggered decomposition and the misspecification terms

namespace {

struct MpContext {
  const PopulationTable* tab = nullptr;
  Eigen::MatrixXd rho;  // rows x T
  double denom = 0.0;
  std::map<int, double> pi;
  std::vector<std::size_t> never;
  Eigen::VectorXd lambda, Lambda0;
};

MpContext mp_context(const PopulationTable& tab) {
  MpContext c;
  c.tab = &tab;
  for (std::size_t i = 0; i < tab.rows.size(); ++i)
    if (tab.rows[i].group == tab.never()) c.never.push_back(i);
  if (c.never.empty()) throw EstimationError("no_never_treated", "population has no never-treated mass");

  const Stacked s = stack(tab, all_rows(tab));
  const Eigen::MatrixXd ddd = pop_demean(s.d, s.mass);
  std::vector<Eigen::MatrixXd> xdd;
  for (const auto& x : s.x) xdd.push_back(pop_demean(x, s.mass));
  c.rho = ddd;
  if (tab.k > 0) {
    const Eigen::VectorXd gamma =
        pop_ls(long_design(xdd), long_design({ddd}).col(0), long_mass(s.mass, tab.T));
    for (int j = 0; j < tab.k; ++j) c.rho -= gamma(j) * xdd[static_cast<std::size_t>(j)];
  }
  for (int g : tab.groups) c.pi[g] = tab.group_mass(g);
  for (int g : tab.groups) {
    if (g > tab.T) continue;
    for (std::size_t i = 0; i < tab.rows.size(); ++i)
      if (tab.rows[i].group == g)
        for (int t = g; t <= tab.T; ++t) c.denom += tab.rows[i].mass * c.rho(static_cast<Eigen::Index>(i), t - 1);
  }
  if (!(std::abs(c.denom) > 1e-14)) throw EstimationError("no_treatment_variation", "no residual treatment variation");

  // Never-treated TWFE coefficients and period intercepts.
  const Stacked u = stack(tab, c.never);
  c.Lambda0 = Eigen::VectorXd::Zero(tab.k);
  if (tab.k > 0) {
    std::vector<Eigen::MatrixXd> ux;
    for (const auto& x : u.x) ux.push_back(pop_demean(x, u.mass));
    c.Lambda0 = pop_ls(long_design(ux), long_design({pop_demean(u.y, u.mass)}).col(0), long_mass(u.mass, tab.T));
  }
  c.lambda.resize(tab.T);
  for (int t = 0; t < tab.T; ++t) {
    Eigen::VectorXd r = u.y.col(t);
    for (int j = 0; j < tab.k; ++j) r -= c.Lambda0(j) * u.x[static_cast<std::size_t>(j)].col(t);
    c.lambda(t) = u.mass.dot(r) / u.mass.sum();
  }
  return c;
}

MbCell mb_cell(const MpContext& c, int g, int t) {
  const PopulationTable& tab = *c.tab;
  require(g >= 2 && g <= tab.T, "g must be a treated group");
  require(t >= 1 && t <= tab.T, "t out of range");
  const int b = g - 1;
  MbCell out;
  out.g = g;
  out.t = t;

  auto dxv = [&](const PopRow& r) {
    std::vector<double> v;
    for (int j = 0; j < tab.k; ++j) v.push_back(r.x(t - 1, j) - r.x(b - 1, j));
    return v;
  };
  auto pairv = [&](const PopRow& r) {
    std::vector<double> v;
    for (int j = 0; j < tab.k; ++j) {
      v.push_back(r.x(t - 1, j));
      v.push_back(r.x(b - 1, j));
    }
    return v;
  };
  // Never-treated conditional means of the path, at four levels of conditioning.
  KeyedMean full, hist, pair, change;
  const auto nu = static_cast<Eigen::Index>(c.never.size());
  Eigen::MatrixXd a(nu, 1 + tab.k);
  Eigen::VectorXd dy(nu), mass(nu);
  for (Eigen::Index q = 0; q < nu; ++q) {
    const PopRow& r = tab.rows[c.never[static_cast<std::size_t>(q)]];
    const double p = r.y(t - 1) - r.y(b - 1);
    full.add(key_of(history_key(r, true)), r.mass, p);
    hist.add(key_of(history_key(r, false)), r.mass, p);
    pair.add(key_of(pairv(r)), r.mass, p);
    change.add(key_of(dxv(r)), r.mass, p);
    a(q, 0) = 1.0;
    const auto dv = dxv(r);
    for (int j = 0; j < tab.k; ++j) a(q, 1 + j) = dv[static_cast<std::size_t>(j)];
    dy(q) = p;
    mass(q) = r.mass;
  }
  // lambda_{0,t,b} and Lambda_{0,t,b}; a degenerate change (t == b) leaves only the intercept.
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(1 + tab.k);
  if (t != b) {
    bool varies = tab.k > 0;
    for (int j = 0; j < tab.k && varies; ++j) {
      const double mean = mass.dot(a.col(1 + j)) / mass.sum();
      varies = (mass.array() * (a.col(1 + j).array() - mean).square()).sum() > 1e-14;
    }
    if (varies)
      coef = pop_ls(a, dy, mass);
    else
      coef(0) = mass.dot(dy) / mass.sum();
  }

  const double pg = c.pi.at(g);
  for (std::size_t i = 0; i < tab.rows.size(); ++i) {
    const PopRow& r = tab.rows[i];
    if (r.group != g) continue;
    const double w = c.rho(static_cast<Eigen::Index>(i), t - 1) * pg / c.denom;
    const auto dv = dxv(r);
    double l0 = coef(0), lam = c.lambda(t - 1) - c.lambda(b - 1);
    for (int j = 0; j < tab.k; ++j) {
      l0 += dv[static_cast<std::size_t>(j)] * coef(1 + j);
      lam += dv[static_cast<std::size_t>(j)] * c.Lambda0(j);
    }
    const double ef = full.at(key_of(history_key(r, true)));
    const double eh = hist.at(key_of(history_key(r, false)));
    const double ep = pair.at(key_of(pairv(r)));
    const double ec = change.at(key_of(dv));
    const double terms[5] = {ef - eh, eh - ep, ep - ec, ec - l0, l0 - lam};
    const double xi = ef - lam;
    const double q = r.mass / pg;
    double sum = 0.0;
    for (int k = 0; k < 5; ++k) {
      out.mb[k] += q * w * terms[k];
      out.mb_plain[k] += q * terms[k];
      out.max_abs_mb[k] = std::max(out.max_abs_mb[k], std::abs(terms[k]));
      sum += terms[k];
    }
    out.telescoping_error = std::max(out.telescoping_error, std::abs(sum - xi));
    out.xi += q * w * xi;
    out.xi_plain += q * xi;
    out.sum_weight += q * w;
    if (t >= g) out.att_term += q * w * r.effect(t - 1);
    out.pt_violation += q * w * (r.shift(t - 1) - r.shift(b - 1));
  }
  return out;
}

}  // namespace

MbCell mb_decomposition(const PopulationTable& tab, int g, int t) { return mb_cell(mp_context(tab), g, t); }

StaggeredDecomposition theorem3_decomposition(const PopulationTable& tab) {
  const MpContext c = mp_context(tab);
  StaggeredDecomposition out;
  out.lambda = c.lambda;
  out.Lambda0 = c.Lambda0;
  for (int g : tab.groups) {
    if (g > tab.T) continue;
    for (int t = 1; t <= tab.T; ++t) {
      MbCell m = mb_cell(c, g, t);
      out.max_telescoping_error = std::max(out.max_telescoping_error, m.telescoping_error);
      if (t >= g) {
        out.post_att += m.att_term;
        out.post_xi += m.xi;
        out.post_pt_violation += m.pt_violation;
        out.post_weight_sum += m.sum_weight;
      } else {
        out.pre_xi += m.xi;
        out.pre_pt_violation += m.pt_violation;
        out.pre_weight_sum += m.sum_weight;
      }
      out.cells.push_back(m);
    }
  }
  // Never-treated cells are all pre-treatment.
  for (std::size_t i : c.never)
    for (int t = 1; t <= tab.T; ++t) out.pre_weight_sum += tab.rows[i].mass * c.rho(static_cast<Eigen::Index>(i), t - 1) / c.denom;
  out.alpha = population_alpha(tab, false);
  out.reconstructed = out.post_att + out.post_xi + out.pre_xi + out.post_pt_violation + out.pre_pt_violation;
  out.closure_error = std::abs(out.reconstructed - out.alpha);
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

PanelDataset simulate_sample(const DiscreteDgp& d, int n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("bad_option", "simulate_sample needs n >= 1");
  (void)enumerate_population(d);  // validates
  std::mt19937_64 rng(seed);
  std::vector<double> probs;
  for (const auto& c : d.cells) probs.push_back(c.prob);
  std::discrete_distribution<int> pick_cell(probs.begin(), probs.end());
  std::normal_distribution<double> normal(0.0, 1.0);

  PanelParts p;
  const int T = d.T;
  for (int t = 1; t <= T; ++t) p.periods.push_back(t);
  Eigen::MatrixXd y(n, T);
  p.tv.assign(static_cast<std::size_t>(d.k()), Eigen::MatrixXd(n, T));
  p.ti.resize(n, d.l());
  p.weight = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    const Cell& c = d.cells[static_cast<std::size_t>(pick_cell(rng))];
    std::discrete_distribution<int> pick_group(c.group_probs.begin(), c.group_probs.end());
    const int g = d.groups[static_cast<std::size_t>(pick_group(rng))];
    const double eta = c.unit_effect + d.unit_effect_sd * normal(rng);
    const auto shift = d.untreated_shift.find(g);
    const auto tau = c.tau.find(g);
    for (int t = 1; t <= T; ++t) {
      double v = c.m0(t - 1) + eta + d.noise_sd * normal(rng);
      if (shift != d.untreated_shift.end()) v += shift->second(t - 1);
      if (g <= T && t >= g && tau != c.tau.end()) v += tau->second(t - 1);
      y(i, t - 1) = v;
    }
    for (int j = 0; j < d.k(); ++j) p.tv[static_cast<std::size_t>(j)].row(i) = c.x.col(j).transpose();
    if (d.l() > 0) p.ti.row(i) = c.z.transpose();
    p.unit_ids.push_back(std::to_string(i + 1));
    p.group.push_back(g);
  }
  p.outcome = y;
  p.tv_names = d.tv_names;
  p.ti_names = d.ti_names;
  return PanelDataset(std::move(p));
}

}  // namespace ddiag::oracle
