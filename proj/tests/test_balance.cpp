#include <doctest.h>

#include <cmath>

#include "ddiag/balance.hpp"
#include "ddiag/error.hpp"
#include "ddiag/oracle.hpp"
#include "support/build.hpp"
#include "support/gen.hpp"

using namespace ddiag;

namespace {

const BalanceRow& row(const BalanceReport& r, const std::string& label) {
  for (const auto& x : r.rows)
    if (x.label == label) return x;
  FAIL("no row " << label);
  return r.rows.front();
}

PanelDataset fixture_panel(const std::string& name) {
  const auto dgp = oracle::DiscreteDgp::load(std::string(DDIAG_FIXTURE_DIR) + "/" + name + ".json");
  return oracle::to_weighted_panel(oracle::enumerate_population(dgp));
}

}  // namespace

TEST_CASE("functional parsing") {
  CHECK(Functional::parse("change:x1").kind == FunctionalKind::change);
  CHECK(Functional::parse("base:x1").label() == "x1_base");
  CHECK(Functional::parse("post:x1").label() == "x1_post");
  const auto at = Functional::parse("at:x2:2003");
  CHECK(at.kind == FunctionalKind::level_at);
  CHECK(at.period_label == 2003);
  const auto ind = Functional::parse("ind:x1>=3");
  CHECK(ind.kind == FunctionalKind::indicator);
  CHECK(ind.threshold == 3.0);
  CHECK(Functional::parse("ti:z1").label() == "z1");
  CHECK_THROWS_AS(Functional::parse("x1"), ValidationError);
  CHECK_THROWS_AS(Functional::parse("wiggle:x1"), ValidationError);
  CHECK_THROWS_AS(Functional::parse("at:x1"), ValidationError);
}

TEST_CASE("two-period TWFE weights balance the covariate change") {
  testgen::Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    auto shape = testgen::random_two_period_shape(rng);
    shape.k = std::max(1, shape.k);
    const auto d = testgen::random_panel(rng, shape);
    const auto v = two_period_view(d, d.period_label(2));
    const auto w = two_period_implicit_weights(v);
    const auto prof = twfe_two_period_profile(v, w, 2);
    CAPTURE(trial);
    const auto rep = balance_report(prof, d, default_functionals(d));
    for (int j = 0; j < d.k(); ++j) {
      const auto& r = row(rep, "d_" + d.tv_names()[static_cast<std::size_t>(j)]);
      CHECK(std::abs(r.weighted) < 1e-8);
    }
  }
}

TEST_CASE("AIPW weights balance every outcome-model column") {
  testgen::Rng rng(12);
  int ran = 0;
  for (int trial = 0; trial < 30; ++trial) {
    auto shape = testgen::random_staggered_shape(rng);
    shape.k = std::max(1, shape.k);
    const auto d = testgen::random_panel(rng, shape);
    const auto spec = CovariateSpec::both({CovariateMode::delta_plus_base, true, {}});
    WeightProfile prof;
    try {
      prof = drdid_profile(d, spec, Estimator::aipw);
    } catch (const EstimationError& e) {
      MESSAGE("skipped: " << std::string(e.what()));
      continue;
    }
    ++ran;
    CAPTURE(trial);
    std::vector<Functional> fs;
    for (const auto& x : d.tv_names()) {
      fs.push_back(Functional::parse("change:" + x));
      fs.push_back(Functional::parse("base:" + x));
    }
    for (const auto& z : d.ti_names()) fs.push_back(Functional::parse("ti:" + z));
    const auto rep = balance_report(prof, d, fs);
    for (const auto& r : rep.rows) {
      CAPTURE(r.label);
      CHECK(std::abs(r.weighted) < 1e-6);
    }
    for (const auto& r : rep.breakdown) CHECK(std::abs(r.weighted) < 1e-6);
  }
  CHECK(ran >= 20);
}

TEST_CASE("uniform weights reproduce raw differences") {
  testgen::Rng rng(13);
  testgen::PanelShape s;
  s.n = 150;
  s.T = 4;
  s.groups = 2;
  s.k = 2;
  s.l = 1;
  s.weights = true;
  const auto d = testgen::random_panel(rng, s);
  const auto prof = uniform_profile(drdid_profile(d, CovariateSpec::both({CovariateMode::delta_only, false, {}}),
                                                  Estimator::ra));
  const auto rep = balance_report(prof, d, default_functionals(d));
  for (const auto& r : rep.rows) {
    CHECK(r.weighted == doctest::Approx(r.raw).epsilon(1e-12));
    CHECK(r.mean_comparison_weighted == doctest::Approx(r.mean_comparison_raw).epsilon(1e-12));
  }
  CHECK(rep.breakdown.size() == rep.rows.size() * prof.scopes.size());
  CHECK(rep.negative_comparison.count == 0);
  CHECK(rep.ess_treated > 0.0);
}

TEST_CASE("negative weight summary") {
  Eigen::VectorXd w(5);
  w << 1.0, -2.0, 0.5, -0.1, 0.0;
  const auto s = negative_weight_summary(w, {"a", "b", "c", "d", "e"});
  CHECK(s.count == 2);
  CHECK(s.share == doctest::Approx(0.4));
  CHECK(s.min_weight == -2.0);
  CHECK(s.unit_ids == std::vector<std::string>{"b", "d"});
  CHECK(negative_weight_summary(Eigen::VectorXd()).count == 0);
  CHECK(s.to_json()["count"] == 2);
}

TEST_CASE("love plot is deterministic and rejects empty reports") {
  testgen::Rng rng(14);
  testgen::PanelShape s;
  s.n = 80;
  s.T = 3;
  s.groups = 1;
  const auto d = testgen::random_panel(rng, s);
  const auto prof = drdid_profile(d, CovariateSpec::both({CovariateMode::delta_plus_base, true, {}}), Estimator::ra);
  const auto rep = balance_report(prof, d, default_functionals(d));
  LovePlotOptions o;
  o.title = "a <b> & c";
  const auto svg1 = love_plot_svg(rep, o);
  const auto svg2 = love_plot_svg(balance_report(prof, d, default_functionals(d)), o);
  CHECK(svg1 == svg2);
  CHECK(svg1.rfind("<svg", 0) == 0);
  CHECK(svg1.find("a &lt;b&gt; &amp; c") != std::string::npos);
  BalanceReport empty;
  CHECK_THROWS_AS(love_plot_svg(empty), ValidationError);
  CHECK_THROWS_AS(balance_report(WeightProfile{}, d, default_functionals(d)), ValidationError);
  CHECK_THROWS_AS(balance_report(prof, d, {}), ValidationError);
  CHECK_THROWS_AS(balance_report(prof, d, {Functional::parse("base:nope")}), ValidationError);
}

TEST_CASE("hidden linearity: TWFE leaves the level imbalanced, AIPW does not") {
  const auto d = fixture_panel("hidden_linearity_level");
  const auto v = two_period_view(d, d.period_label(2));
  const auto tw = balance_report(twfe_two_period_profile(v, two_period_implicit_weights(v), 2), d,
                                 {Functional::parse("base:x1"), Functional::parse("change:x1")});
  const auto ai = balance_report(drdid_profile(d, CovariateSpec::both({CovariateMode::delta_plus_base, true, {}}),
                                               Estimator::aipw),
                                 d, {Functional::parse("base:x1"), Functional::parse("change:x1")});
  MESSAGE("twfe base std diff " << row(tw, "x1_base").weighted << ", aipw " << row(ai, "x1_base").weighted);
  CHECK(std::abs(row(tw, "x1_base").weighted) > 0.3);
  CHECK(std::abs(row(ai, "x1_base").weighted) < 0.05);
  CHECK(std::abs(row(tw, "d_x1").weighted) < 1e-8);
}

TEST_CASE("report serialisation") {
  testgen::Rng rng(15);
  testgen::PanelShape s;
  s.n = 60;
  s.T = 3;
  s.groups = 2;
  const auto d = testgen::random_panel(rng, s);
  const auto prof = drdid_profile(d, CovariateSpec::both({CovariateMode::delta_only, false, {}}), Estimator::ra);
  const auto rep = balance_report(prof, d, default_functionals(d));
  const auto j = rep.to_json(d);
  CHECK(j.contains("rows"));
  const auto csv = rep.to_csv(d);
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        static_cast<long>(1 + rep.rows.size() + rep.breakdown.size()));
}
