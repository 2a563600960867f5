#include <doctest.h>

#include <cmath>

#include "ddiag/drdid.hpp"
#include "ddiag/error.hpp"
#include "support/build.hpp"
#include "support/gen.hpp"

using namespace ddiag;
using testgen::make_panel;

namespace {

Eigen::VectorXd dy_rows(const PanelDataset& d, const std::vector<int>& rows, int t, int base) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    v(static_cast<Eigen::Index>(r)) = d.outcome()(rows[r], t - 1) - d.outcome()(rows[r], base - 1);
  return v;
}

double wmean(const Eigen::VectorXd& v, const Eigen::VectorXd& w) { return v.dot(w) / w.sum(); }

CovariateSpec spec_of(CovariateMode m, bool ti = true) { return CovariateSpec::both({m, ti, {}}); }

}  // namespace

TEST_CASE("reductions: flat propensity gives RA, flat outcome model gives IPW") {
  testgen::Rng rng(101);
  int ran = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto shape = testgen::random_staggered_shape(rng);
    shape.k = std::max(1, shape.k);
    const auto d = testgen::random_panel(rng, shape);
    const int g = d.treated_groups().front();
    const int t = rng.integer(g, d.T());
    CAPTURE(trial);
    const ModelSpec m{CovariateMode::delta_plus_base, true, {}};
    const CovariateSpec ra_like{m, ModelSpec::intercept_only()};
    CHECK(std::abs(att_gt_aipw(d, ra_like, g, t).att - att_gt_ra(d, ra_like, g, t).att) < 1e-12);
    const CovariateSpec ipw_like{ModelSpec::intercept_only(), m};
    try {
      const double a = att_gt_aipw(d, ipw_like, g, t).att;
      CHECK(std::abs(a - att_gt_ipw(d, ipw_like, g, t).att) < 1e-12);
      ++ran;
    } catch (const NumericError& e) {
      MESSAGE("skipped: " << std::string(e.what()));
    }
  }
  CHECK(ran >= 30);
}

TEST_CASE("implicit weights balance the outcome design and reproduce the estimate") {
  testgen::Rng rng(202);
  for (int trial = 0; trial < 40; ++trial) {
    auto shape = trial % 2 ? testgen::random_staggered_shape(rng) : testgen::random_two_period_shape(rng);
    const auto d = testgen::random_panel(rng, shape);
    const int g = d.treated_groups().back();
    const int t = rng.integer(g, d.T());
    CAPTURE(trial);
    const auto spec = spec_of(shape.k ? CovariateMode::delta_plus_base : CovariateMode::none);
    AttFit f;
    try {
      f = att_gt_fit(d, spec, g, t, Estimator::aipw);
    } catch (const EstimationError& e) {
      MESSAGE("skipped: " << std::string(e.what()));
      continue;
    }
    const auto& w = f.weights;
    CHECK(std::abs(wmean(w.theta0, w.sample_weight_comparison) - 1.0) < 1e-10);
    for (Eigen::Index c = 0; c < w.design.x.cols(); ++c) {
      Eigen::VectorXd xt(static_cast<Eigen::Index>(w.treated_rows.size()));
      Eigen::VectorXd xc(static_cast<Eigen::Index>(w.comparison_rows.size()));
      for (std::size_t r = 0; r < w.treated_rows.size(); ++r) xt(static_cast<Eigen::Index>(r)) = w.design.x(w.treated_rows[r], c);
      for (std::size_t r = 0; r < w.comparison_rows.size(); ++r)
        xc(static_cast<Eigen::Index>(r)) = w.design.x(w.comparison_rows[r], c);
      const double bal = wmean(xt, w.sample_weight_treated) -
                         wmean(xc.cwiseProduct(w.theta0), w.sample_weight_comparison);
      CHECK(std::abs(bal) < 1e-6 * (1.0 + xt.cwiseAbs().maxCoeff()));
    }
    const int base = f.result.base;
    const double via_weights = wmean(dy_rows(d, w.treated_rows, t, base), w.sample_weight_treated) -
                               wmean(dy_rows(d, w.comparison_rows, t, base).cwiseProduct(w.theta0),
                                     w.sample_weight_comparison);
    CHECK(std::abs(via_weights - f.result.att) < 1e-9 * (1.0 + std::abs(f.result.att)));
    // weights without outcomes are the same
    const auto w2 = att_gt_weights(without_outcome(d), spec, g, t, Estimator::aipw);
    CHECK((w2.theta0 - w.theta0).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("ATT(2,2) with the full covariate history equals the two-period estimator") {
  testgen::Rng rng(303);
  for (int trial = 0; trial < 25; ++trial) {
    auto shape = testgen::random_two_period_shape(rng);
    shape.k = std::max(1, std::min(shape.k, 2));
    const auto d = testgen::random_panel(rng, shape);
    CAPTURE(trial);
    const auto spec = spec_of(CovariateMode::full_history);
    double a = 0.0;
    try {
      a = att_gt_aipw(d, spec, 2, 2).att;
    } catch (const EstimationError& e) {
      MESSAGE("skipped: " << std::string(e.what()));
      continue;
    }
    const auto b = two_period_aipw(two_period_view(d, d.period_label(2)), spec);
    CHECK(std::abs(a - b.first) < 1e-10);
  }
}

TEST_CASE("anticipation shifts the base period") {
  // Effect of 2 begins one period before adoption.
  const int n = 40, T = 4;
  Eigen::MatrixXd y(n, T);
  std::vector<int> g;
  for (int i = 0; i < n; ++i) {
    g.push_back(i % 2 ? 4 : 5);
    for (int t = 1; t <= T; ++t) y(i, t - 1) = 0.1 * i + t + (g.back() == 4 && t >= 3 ? 2.0 : 0.0);
  }
  auto d = make_panel(y, g);
  AttOptions none, one;
  one.anticipation = 1;
  const auto spec = CovariateSpec::both(ModelSpec::intercept_only());
  auto r0 = att_gt_aipw(d, spec, 4, 4, none);
  auto r1 = att_gt_aipw(d, spec, 4, 4, one);
  CHECK(r0.base == 3);
  CHECK(r1.base == 2);
  CHECK(r0.att == doctest::Approx(0.0));
  CHECK(r1.att == doctest::Approx(2.0));
  AttOptions too_much;
  too_much.anticipation = 3;
  CHECK_THROWS_AS(att_gt_aipw(d, spec, 4, 4, too_much), EstimationError);
}

TEST_CASE("identities hold unchanged with one anticipation period") {
  testgen::Rng rng(909);
  AttOptions o;
  o.anticipation = 1;
  int cells = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto shape = testgen::random_staggered_shape(rng);
    shape.T = std::max(shape.T, 4);
    shape.groups = std::min(shape.groups, shape.T - 1);
    shape.k = std::max(1, shape.k);
    const auto d = testgen::random_panel(rng, shape);
    CAPTURE(trial);
    const ModelSpec m{CovariateMode::delta_plus_base, true, {}};
    for (int g : d.treated_groups()) {
      if (g < 3) continue;
      for (int t = g; t <= d.T(); ++t) {
        const CovariateSpec ra_like{m, ModelSpec::intercept_only()};
        CHECK(std::abs(att_gt_aipw(d, ra_like, g, t, o).att - att_gt_ra(d, ra_like, g, t, o).att) < 1e-12);
        AttFit f;
        try {
          f = att_gt_fit(d, CovariateSpec::both(m), g, t, Estimator::aipw, o);
        } catch (const EstimationError& e) {
          MESSAGE("skipped: " << std::string(e.what()));
          continue;
        }
        ++cells;
        CHECK(f.result.base == g - 2);
        const auto& w = f.weights;
        CHECK(std::abs(wmean(w.theta0, w.sample_weight_comparison) - 1.0) < 1e-10);
        for (Eigen::Index c = 0; c < w.design.x.cols(); ++c) {
          double mt = 0, mc = 0;
          for (std::size_t r = 0; r < w.treated_rows.size(); ++r)
            mt += w.sample_weight_treated(static_cast<Eigen::Index>(r)) * w.design.x(w.treated_rows[r], c);
          for (std::size_t r = 0; r < w.comparison_rows.size(); ++r) {
            const auto ri = static_cast<Eigen::Index>(r);
            mc += w.sample_weight_comparison(ri) * w.theta0(ri) * w.design.x(w.comparison_rows[r], c);
          }
          mt /= w.sample_weight_treated.sum();
          mc /= w.sample_weight_comparison.sum();
          CHECK(std::abs(mt - mc) < 1e-6 * std::max(1.0, std::abs(mt)));
        }
      }
    }
  }
  CHECK(cells > 20);
}

TEST_CASE("not-yet-treated comparison uses later cohorts") {
  const int T = 5;
  std::vector<int> g;
  Eigen::MatrixXd y(30, T);
  for (int i = 0; i < 30; ++i) {
    g.push_back(2 + i % 5);  // 2..6, 6 = never
    for (int t = 0; t < T; ++t) y(i, t) = i + t;
  }
  auto d = make_panel(y, g);
  const auto spec = CovariateSpec::both(ModelSpec::intercept_only());
  AttOptions nyt;
  nyt.comparison = Comparison::not_yet_treated;
  CHECK(att_gt_ra(d, spec, 2, 2).n_comparison == 6);
  CHECK(att_gt_ra(d, spec, 2, 2, nyt).n_comparison == 24);  // cohorts 3,4,5 + never
  CHECK(att_gt_ra(d, spec, 2, 4, nyt).n_comparison == 12);  // cohort 5 + never
  CHECK(att_gt_ra(d, spec, 4, 2, nyt).n_comparison == 12);  // pre cell: G > 4
  nyt.anticipation = 1;
  CHECK(att_gt_ra(d, spec, 3, 3, nyt).n_comparison == 12);  // G > 4
  CHECK(att_gt_ra(d, spec, 3, 4, nyt).n_comparison == 6);   // G > 5
  CHECK(att_gt_ra(d, spec, 3, 4, nyt).att == doctest::Approx(0.0));
  CHECK_THROWS_AS(att_gt_ra(d, spec, 2, 4, nyt), EstimationError);
}

TEST_CASE("aggregation weights") {
  // Two cohorts, shares 1/4 and 3/4, T = 3.
  const int T = 3;
  std::vector<int> g;
  Eigen::MatrixXd y(16, T);
  for (int i = 0; i < 16; ++i) {
    g.push_back(i < 2 ? 2 : (i < 8 ? 3 : 4));
    y.row(i).setZero();
  }
  auto d = make_panel(y, g);
  std::vector<GroupTimeResult> cells;
  auto cell = [&](int gg, int t, double v) {
    GroupTimeResult r;
    r.g = gg;
    r.t = t;
    r.att = v;
    cells.push_back(r);
  };
  cell(2, 2, 1.0);
  cell(2, 3, 3.0);
  cell(3, 3, 10.0);
  cell(3, 1, -1.0);
  auto o = aggregate_overall(cells, d);
  // p-bar = (0.25, 0.75); group 2 averages 2, group 3 gives 10
  CHECK(o.values.at(0).estimate == doctest::Approx(0.25 * 2.0 + 0.75 * 10.0));
  double wsum = 0.0;
  for (const auto& [gt, w] : o.values[0].components) wsum += w;
  CHECK(wsum == doctest::Approx(1.0));
  auto es = aggregate_event_study(cells, d);
  REQUIRE(es.values.size() == 3);  // e = -2, 0, 1
  CHECK(es.values[0].event_time == -2);
  CHECK(es.values[0].estimate == doctest::Approx(-1.0));
  CHECK(es.values[1].estimate == doctest::Approx(0.25 * 1.0 + 0.75 * 10.0));
  CHECK(es.values[2].estimate == doctest::Approx(3.0));
  cells.pop_back();
  cells.erase(cells.begin() + 2);
  CHECK_THROWS_AS(aggregate_overall(cells, d), EstimationError);
}

TEST_CASE("bootstrap is deterministic and thread-count free") {
  testgen::Rng rng(404);
  testgen::PanelShape s;
  s.n = 200;
  s.T = 3;
  s.groups = 2;
  const auto d = testgen::random_panel(rng, s);
  const auto spec = spec_of(CovariateMode::delta_plus_base);
  EstimateFn f = [&](const PanelDataset& b) {
    const auto grid = att_gt_grid(b, spec, Estimator::aipw);
    Eigen::VectorXd v(1);
    v(0) = aggregate_overall(grid, b).values[0].estimate;
    return v;
  };
  auto a = bootstrap_se(f, d, 40, 7, 1);
  auto b = bootstrap_se(f, d, 40, 7, 4);
  auto c = bootstrap_se(f, d, 40, 8, 1);
  CHECK(a.se(0) == b.se(0));
  CHECK(a.draws == b.draws);
  CHECK(a.se(0) != c.se(0));
  CHECK(a.se(0) > 0.0);
  CHECK_THROWS_AS(bootstrap_se(f, d, 1, 7), ValidationError);
}

TEST_CASE("constant outcome gives zero ATT and zero bootstrap SE") {
  testgen::Rng rng(505);
  testgen::PanelShape s;
  s.n = 120;
  s.T = 3;
  s.groups = 1;
  auto p = testgen::random_panel(rng, s);
  PanelParts parts;
  parts.unit_ids = p.unit_ids();
  for (int t = 1; t <= p.T(); ++t) parts.periods.push_back(p.period_label(t));
  parts.outcome = Eigen::MatrixXd::Constant(p.n(), p.T(), 4.0);
  parts.group = p.group();
  parts.tv = {p.tv(0)};
  parts.tv_names = p.tv_names();
  parts.ti = Eigen::MatrixXd(p.n(), 0);
  parts.weight = p.weight();
  const PanelDataset d(std::move(parts));
  const auto spec = spec_of(CovariateMode::delta_plus_base);
  const int g = d.treated_groups().front();
  CHECK(std::abs(att_gt_aipw(d, spec, g, d.T()).att) < 1e-12);
  EstimateFn f = [&](const PanelDataset& b) {
    Eigen::VectorXd v(1);
    v(0) = att_gt_aipw(b, spec, g, b.T()).att;
    return v;
  };
  CHECK(bootstrap_se(f, d, 30, 3, 2).se(0) < 1e-12);
}

TEST_CASE("overlap failure is an estimation error; trimming recovers") {
  // Covariate nearly determines treatment.
  const int n = 200;
  Eigen::MatrixXd y(n, 2), x(n, 2);
  std::vector<int> g;
  testgen::Rng rng(606);
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    x(i, 0) = v;
    x(i, 1) = v + 0.1 * rng.normal();
    const bool treat = 12.0 * v + rng.normal() > 0.0;
    g.push_back(treat ? 2 : 3);
    y(i, 0) = v + rng.normal();
    y(i, 1) = y(i, 0) + 1.0 + (treat ? 1.0 : 0.0) + rng.normal();
  }
  auto d = make_panel(y, g, {x});
  const auto spec = spec_of(CovariateMode::base_level);
  bool threw = false;
  try {
    att_gt_aipw(d, spec, 2, 2);
  } catch (const EstimationError& e) {
    threw = true;
    CHECK((e.code() == "overlap" || e.code() == "separation"));
  }
  CHECK(threw);
}

TEST_CASE("small groups fall back to regression adjustment") {
  testgen::Rng rng(707);
  const int n = 40;
  Eigen::MatrixXd y(n, 2), x(n, 2);
  std::vector<int> g;
  for (int i = 0; i < n; ++i) {
    g.push_back(i < 3 ? 2 : 3);
    x(i, 0) = rng.normal();
    x(i, 1) = x(i, 0) + rng.normal();
    y(i, 0) = rng.normal();
    y(i, 1) = y(i, 0) + x(i, 1) + rng.normal();
  }
  auto d = make_panel(y, g, {x});
  const auto spec = spec_of(CovariateMode::delta_plus_base);
  auto r = att_gt_aipw(d, spec, 2, 2);
  CHECK(r.used == Estimator::ra);
  CHECK(r.estimator == Estimator::aipw);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("regression adjustment") != std::string::npos);
  CHECK(r.att == doctest::Approx(att_gt_ra(d, spec, 2, 2).att).epsilon(1e-12));
  AttOptions o;
  o.min_group_size = 3;
  CHECK(att_gt_aipw(d, spec, 2, 2, o).used == Estimator::aipw);
}

TEST_CASE("duplicating every unit leaves estimates unchanged") {
  testgen::Rng rng(808);
  for (int trial = 0; trial < 15; ++trial) {
    auto shape = testgen::random_staggered_shape(rng);
    const auto d = testgen::random_panel(rng, shape);
    const auto dd = testgen::duplicate(d);
    const auto spec = spec_of(shape.k ? CovariateMode::delta_plus_base : CovariateMode::none);
    CAPTURE(trial);
    for (Estimator e : {Estimator::ra, Estimator::ipw, Estimator::aipw}) {
      std::vector<GroupTimeResult> a, b;
      try {
        a = att_gt_grid(d, spec, e);
      } catch (const EstimationError& err) {
        MESSAGE("skipped: " << std::string(err.what()));
        continue;
      }
      b = att_gt_grid(dd, spec, e);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i].att - b[i].att) < 1e-8 * (1 + std::abs(a[i].att)));
    }
  }
}

TEST_CASE("names round-trip and unknown names are rejected") {
  for (auto e : {Estimator::aipw, Estimator::ra, Estimator::ipw}) CHECK(estimator_from_string(to_string(e)) == e);
  for (auto c : {Comparison::never_treated, Comparison::not_yet_treated})
    CHECK(comparison_from_string(to_string(c)) == c);
  CHECK_THROWS_AS(estimator_from_string("ols"), ValidationError);
  CHECK_THROWS_AS(CovariateSpec::from_json({{"outcome", {{"mode", "delta_only"}}}, {"bogus", 1}}), ValidationError);
  const auto s = CovariateSpec::from_json({{"mode", "full_history"}, {"interactions", nlohmann::json::array({nlohmann::json::array({"x1@1", "x1@1"})})}});
  CHECK(s.outcome.mode == CovariateMode::full_history);
  CHECK(CovariateSpec::from_json(s.to_json()).propensity.interactions.size() == 1);
}
