#include <doctest.h>

#include <cmath>

#include "ddiag/error.hpp"
#include "ddiag/oracle.hpp"
#include "ddiag/twfe.hpp"
#include "support/build.hpp"
#include "support/gen.hpp"

using namespace ddiag;
using testgen::make_panel;

namespace {

PanelDataset four_units() {
  Eigen::MatrixXd y(4, 2), x(4, 2);
  y << 0, 3, 0, 2, 0, 1, 0, 0;
  x << 0, 1, 0, 0, 0, 1, 0, 0;
  return make_panel(y, {2, 2, 3, 3}, {x});
}

double wmean_if(const Eigen::VectorXd& v, const Eigen::VectorXd& w, const Eigen::VectorXd& d, double val) {
  double s = 0, m = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (d(i) == val) {
      s += w(i) * v(i);
      m += w(i);
    }
  return s / m;
}

}  // namespace

TEST_CASE("four-unit first-difference example") {
  auto v = two_period_view(four_units(), 2);
  auto f = fit_fd_twfe(v);
  CHECK(f.alpha == doctest::Approx(2.0));
  CHECK(f.beta(0) == doctest::Approx(1.0));
  CHECK(fwl_alpha(v) == doctest::Approx(2.0));
  auto w = two_period_implicit_weights(v);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(w.lhat(i) == doctest::Approx(0.5));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(w.weight(i) == doctest::Approx(1.0));
}

TEST_CASE("canonical two-by-two and zero outcome") {
  Eigen::MatrixXd y(4, 2);
  y << 0, 2, 1, 3, 0, 1, 2, 3;
  auto v = two_period_view(make_panel(y, {2, 2, 3, 3}), 2);
  CHECK(fit_fd_twfe(v).alpha == doctest::Approx(1.0));
  CHECK(fwl_alpha(v) == doctest::Approx(1.0));
  auto w = two_period_implicit_weights(v);
  CHECK((w.weight.array() - 1.0).abs().maxCoeff() < 1e-12);

  Eigen::MatrixXd x(4, 2);
  x << 0, 1, 0, 3, 1, 1, 0, 2;
  auto z = fit_fd_twfe(two_period_view(make_panel(Eigen::MatrixXd::Zero(4, 2), {2, 2, 3, 3}, {x}), 2));
  CHECK(std::abs(z.alpha) < 1e-12);
  CHECK(std::abs(z.beta(0)) < 1e-12);
}

TEST_CASE("treatment explained by the covariate change is an error") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(4, 2), x(4, 2);
  x << 0, 1, 0, 1, 0, 0, 0, 0;
  auto v = two_period_view(make_panel(y, {2, 2, 3, 3}, {x}), 2);
  CHECK_THROWS_WITH_AS(fwl_alpha(v), doctest::Contains("no residual treatment variation"), EstimationError);
}

TEST_CASE("an outlying covariate change gives a negative treated weight") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(8, 2), x = Eigen::MatrixXd::Zero(8, 2);
  // Treated units have larger changes; one extreme treated change pushes its L-hat above 1.
  const double dx[8] = {1, 2, 3, 12, 0, 1, 0, 1};
  for (int i = 0; i < 8; ++i) x(i, 1) = dx[i];
  y.col(1) = Eigen::VectorXd::LinSpaced(8, 0, 1);
  auto w = two_period_implicit_weights(two_period_view(make_panel(y, {2, 2, 2, 2, 3, 3, 3, 3}, {x}), 2));
  CHECK(w.lhat(3) > 1.0);
  CHECK(w.weight(3) < 0.0);
  CHECK(w.negative_treated >= 1);
}

TEST_CASE("projection identities, FWL and implicit-weight properties on random datasets") {
  testgen::Rng r(2024);
  for (int rep = 0; rep < 50; ++rep) {
    auto s = testgen::random_two_period_shape(r);
    auto data = testgen::random_panel(r, s);
    auto v = two_period_view(data, data.period_label(2));
    const Eigen::VectorXd& w = v.weight;
    const Eigen::MatrixXd a = testgen::with_ones(v.dx);
    const Eigen::VectorXd lhat = a * testgen::normal_eq(a, v.treat, w);
    Eigen::VectorXd l1(v.n()), l0(v.n());
    for (double d : {0.0, 1.0}) {
      Eigen::VectorXd wd = w;
      for (Eigen::Index i = 0; i < v.n(); ++i) wd(i) = v.treat(i) == d ? w(i) : 0.0;
      const Eigen::VectorXd fit = a * testgen::normal_eq(a, v.dy, wd);
      (d == 1.0 ? l1 : l0) = fit;
      // fitted values reproduce the lhat-weighted mean of dY within each arm
      CHECK(std::abs(wmean_if(lhat.cwiseProduct(fit), w, v.treat, d) - wmean_if(lhat.cwiseProduct(v.dy), w, v.treat, d)) <
            1e-10 * (1 + v.dy.cwiseAbs().maxCoeff()));
    }
    // residual variance of D equals pi times the treated mean of 1 - lhat
    const double pi = v.treated_share();
    const Eigen::VectorXd e = v.treat - lhat;
    const double lhs = w.dot(e.cwiseProduct(e)) / w.sum();
    const double rhs = wmean_if((1.0 - lhat.array()).matrix(), w, v.treat, 1.0) * pi;
    CHECK(std::abs(lhs - rhs) < 1e-10);
    // alpha as a (1 - lhat)-weighted mean of the fitted-trend gap
    const auto fit = fit_fd_twfe(v);
    const Eigen::VectorXd wt = (1.0 - lhat.array()).matrix() / wmean_if((1.0 - lhat.array()).matrix(), w, v.treat, 1.0);
    const double prop = wmean_if(wt.cwiseProduct(l1 - l0), w, v.treat, 1.0);
    CHECK(std::abs(prop - fit.alpha) <= 1e-8 * std::max(1.0, std::abs(fit.alpha)));
    // FWL
    CHECK(std::abs(fwl_alpha(v) - fit.alpha) <= 1e-8 * std::max(1.0, std::abs(fit.alpha)));
    // implicit weights: treated mean one, alpha reproduced, dX balanced
    const auto iw = two_period_implicit_weights(v);
    CHECK(std::abs(wmean_if(iw.weight, w, v.treat, 1.0) * 1.0 - 1.0) < 1e-10);
    CHECK(std::abs(wmean_if(iw.weight.cwiseProduct(v.dy), w, v.treat, 1.0) -
                   wmean_if(iw.weight.cwiseProduct(v.dy), w, v.treat, 0.0) - fit.alpha) <
          1e-8 * std::max(1.0, std::abs(fit.alpha)));
    for (int j = 0; j < v.k(); ++j)
      CHECK(std::abs(wmean_if(iw.weight.cwiseProduct(v.dx.col(j)), w, v.treat, 1.0) -
                     wmean_if(iw.weight.cwiseProduct(v.dx.col(j)), w, v.treat, 0.0)) < 1e-8);
    // the within estimator coincides with first differences at T = 2
    CHECK(std::abs(fit_fe_twfe(data).alpha - fit.alpha) < 1e-8 * std::max(1.0, std::abs(fit.alpha)));
  }
}

TEST_CASE("replication invariance") {
  testgen::Rng r(8);
  auto data = testgen::random_panel(r, testgen::random_two_period_shape(r));
  auto dup = testgen::duplicate(data);
  auto v = two_period_view(data, data.period_label(2)), v2 = two_period_view(dup, dup.period_label(2));
  CHECK(fwl_alpha(v2) == doctest::Approx(fwl_alpha(v)).epsilon(1e-10));
  auto w = two_period_implicit_weights(v), w2 = two_period_implicit_weights(v2);
  CHECK((w2.weight.head(v.n()) - w.weight).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((w2.weight.tail(v.n()) - w.weight).cwiseAbs().maxCoeff() < 1e-9);

  testgen::PanelShape s;
  s.T = 4;
  s.groups = 2;
  auto sd = testgen::random_panel(r, s);
  CHECK(fit_fe_twfe(testgen::duplicate(sd)).alpha == doctest::Approx(fit_fe_twfe(sd).alpha).epsilon(1e-10));
}

TEST_CASE("additive outcomes give zero alpha") {
  testgen::Rng r(12);
  Eigen::MatrixXd y(30, 4);
  std::vector<int> g;
  for (int i = 0; i < 30; ++i) {
    const double a = r.normal();
    for (int t = 0; t < 4; ++t) y(i, t) = a + 0.7 * t * t;
    g.push_back(i % 3 == 0 ? 2 : (i % 3 == 1 ? 4 : 5));
  }
  CHECK(std::abs(fit_fe_twfe(make_panel(y, g)).alpha) < 1e-12);
}

TEST_CASE("h table example") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(4, 3);
  auto d = make_panel(y, {2, 2, 4, 4});
  Eigen::MatrixXd h = twfe_h_table(d);
  CHECK(h(0, 0) == doctest::Approx(-1.0 / 3));
  CHECK(h(0, 1) == doctest::Approx(1.0 / 6));
  CHECK(h(0, 2) == doctest::Approx(1.0 / 6));
  CHECK(std::abs(h.row(0).sum()) < 1e-12);
}

TEST_CASE("multi-period weight sums and decomposition on random staggered panels") {
  testgen::Rng r(77);
  for (int rep = 0; rep < 20; ++rep) {
    auto s = testgen::random_staggered_shape(r);
    auto data = testgen::random_panel(r, s);
    auto fit = fit_fe_twfe(data);
    auto w = mp_implicit_weights(data, fit);
    CHECK(std::abs(w.post_sum - 1.0) < 1e-8);
    CHECK(std::abs(w.pre_sum + 1.0) < 1e-8);
    CHECK(std::abs(w.post_contribution + w.pre_contribution + w.remainder - fit.alpha) < 1e-10);
    CHECK(std::abs(w.alpha_pre_zeroed - (fit.alpha - w.pre_contribution)) < 1e-12);
    // rho rows sum to zero, weighted columns too
    CHECK(w.rho.rowwise().sum().cwiseAbs().maxCoeff() < 1e-10);
    // the residualised treatment is orthogonal to every demeaned covariate
    for (int j = 0; j < data.k(); ++j) {
      const Eigen::MatrixXd xdd = double_demean(data.tv(j), data.weight());
      const double dot = (data.weight().asDiagonal() * xdd.cwiseProduct(w.rho)).sum();
      CHECK(std::abs(dot) < 1e-8 * (1.0 + xdd.cwiseAbs().sum()));
    }
    auto ws = mp_weight_structure(without_outcome(data));
    CHECK((ws.rho - w.rho).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("multi-period weights need never-treated units") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(6, 3);
  auto d = make_panel(y, {2, 2, 3, 3, 3, 2});
  CHECK_THROWS_WITH_AS(mp_weight_structure(d), doctest::Contains("require never-treated units"), EstimationError);
}

TEST_CASE("never-treated projection recovers an exact model") {
  testgen::Rng r(3);
  const int n = 40, T = 4;
  Eigen::MatrixXd y(n, T), x1(n, T), x2(n, T);
  std::vector<int> g;
  const Eigen::Vector4d lambda(1.0, -0.5, 2.0, 0.3);
  for (int i = 0; i < n; ++i) {
    g.push_back(i < 10 ? 3 : 5);
    for (int t = 0; t < T; ++t) {
      x1(i, t) = r.normal();
      x2(i, t) = r.normal();
      y(i, t) = lambda(t) + 1.5 * x1(i, t) - 0.25 * x2(i, t);
    }
  }
  auto p = never_treated_projection(make_panel(y, g, {x1, x2}));
  CHECK(p.Lambda0(0) == doctest::Approx(1.5));
  CHECK(p.Lambda0(1) == doctest::Approx(-0.25));
  for (int t = 0; t < T; ++t) CHECK(p.lambda(t) == doctest::Approx(lambda(t)));

  auto q = never_treated_projection(make_panel(y, g));
  for (int t = 0; t < T; ++t) {
    double m = 0;
    for (int i = 10; i < n; ++i) m += y(i, t);
    CHECK(q.lambda(t) == doctest::Approx(m / 30));
  }
}

TEST_CASE("sample quantities on enumerated populations match the oracle") {
  for (const std::string name : {"staggered_3g", "mb5_only", "mb2_only", "pretrend_violation", "flat"}) {
    CAPTURE(name);
    const auto dgp = oracle::DiscreteDgp::load(std::string(DDIAG_FIXTURE_DIR) + "/" + name + ".json");
    const auto tab = oracle::enumerate_population(dgp);
    const auto panel = oracle::to_weighted_panel(tab);
    const auto t3 = oracle::theorem3_decomposition(tab);
    auto fit = fit_fe_twfe(panel);
    CHECK(std::abs(fit.alpha - t3.alpha) < 1e-10);
    auto proj = never_treated_projection(panel);
    CHECK((proj.Lambda0 - t3.Lambda0).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((proj.lambda - t3.lambda).cwiseAbs().maxCoeff() < 1e-6);
    auto w = mp_implicit_weights(panel, fit);
    CHECK(std::abs(w.post_sum - t3.post_weight_sum) < 1e-10);
    CHECK(std::abs(w.pre_sum - t3.pre_weight_sum) < 1e-10);
    CHECK(w.warnings.empty());
    // The sample split matches the population split only up to the remainder.
    MESSAGE(name << ": alpha " << fit.alpha << ", remainder " << w.remainder << ", pre " << w.pre_contribution
                 << " vs " << t3.pre_xi + t3.pre_pt_violation);
    if (std::abs(w.remainder) < 1e-10)
      CHECK(std::abs(w.pre_contribution - (t3.pre_xi + t3.pre_pt_violation)) < 1e-8);
    if (std::abs(fit.alpha) > 1e-8) CHECK(std::abs(w.remainder) < 0.05 * std::abs(fit.alpha));
  }
}

TEST_CASE("zero never-treated mean of rho flags the period") {
  // T = 3, symmetric linear covariate: the middle period residual averages to zero
  // among never-treated units.
  const int T = 3;
  std::vector<int> g;
  Eigen::MatrixXd y(0, T), x(0, T);
  std::vector<Eigen::RowVectorXd> ys, xs;
  for (int a = 0; a < 2; ++a)
    for (int grp : {2, 3, 4})
      for (int rep = 0; rep < 2; ++rep) {
        Eigen::RowVectorXd xr(T), yr(T);
        for (int t = 0; t < T; ++t) {
          xr(t) = a * (t + 1);
          yr(t) = 0.3 * (t + 1) + a * (t + 1) * (t + 1) + (t + 1 >= grp ? 1.0 + rep : 0.0);
        }
        xs.push_back(xr);
        ys.push_back(yr);
        g.push_back(grp);
      }
  y.resize(static_cast<Eigen::Index>(ys.size()), T);
  x.resize(y.rows(), T);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    y.row(static_cast<Eigen::Index>(i)) = ys[i];
    x.row(static_cast<Eigen::Index>(i)) = xs[i];
  }
  auto d = make_panel(y, g, {x});
  auto w = mp_implicit_weights(d, fit_fe_twfe(d));
  bool any_undefined = false;
  for (const auto& c : w.cells) any_undefined = any_undefined || !c.comparison_defined;
  CHECK(any_undefined);
  CHECK_FALSE(w.warnings.empty());
  CHECK(w.to_json(d)["warnings"].size() == w.warnings.size());
}

TEST_CASE("region-by-period effects") {
  testgen::Rng r(21);
  const int n = 60, T = 3;
  Eigen::MatrixXd y(n, T), z(n, 1);
  std::vector<int> g;
  for (int i = 0; i < n; ++i) {
    z(i, 0) = i % 2;
    g.push_back(i % 3 == 0 ? 2 : 4);
    for (int t = 0; t < T; ++t) y(i, t) = (z(i, 0) == 1 ? 3.0 * t : -1.0 * t) + (t + 1 >= g.back() ? 2.0 : 0.0) + 0.01 * r.normal();
  }
  auto d = make_panel(y, g, {}, Eigen::VectorXd(), z);
  auto f = fit_fe_twfe(d, std::string("z1"));
  CHECK(f.alpha == doctest::Approx(2.0).epsilon(0.02));
  CHECK(f.region.has_value());
}
