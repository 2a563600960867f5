#include "ddiag/numcore.hpp"

#include <cmath>
#include <span>
#include <sstream>

#include "ddiag/error.hpp"
#include "ddiag/kernels.hpp"

namespace ddiag {

namespace {

constexpr double kPivotTol = 1e-10;

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& design, bool intercept) {
  if (!intercept) return design;
  Eigen::MatrixXd x(design.rows(), design.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(design.cols()) = design;
  return x;
}

std::vector<std::string> full_labels(const std::vector<std::string>& labels, Eigen::Index p, bool intercept) {
  std::vector<std::string> out;
  if (intercept) out.emplace_back("(intercept)");
  for (Eigen::Index j = 0; j < p; ++j)
    out.push_back(static_cast<std::size_t>(j) < labels.size() ? labels[static_cast<std::size_t>(j)]
                                                              : "x" + std::to_string(j + 1));
  return out;
}

// Solves min sum w (y - X b)^2 by column-pivoted QR of sqrt(w) X.
Eigen::MatrixXd wls_solve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& w,
                          const std::vector<std::string>& names) {
  if (x.rows() != y.rows() || x.rows() != w.size())
    throw ValidationError("shape", "linear_projection: row counts differ");
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (!(w(i) >= 0.0)) throw ValidationError("bad_weight", "linear_projection: weights must be nonnegative");
  if (x.cols() == 0) return Eigen::MatrixXd::Zero(0, y.cols());
  const Eigen::VectorXd sw = w.cwiseSqrt();
  Eigen::MatrixXd xs = sw.asDiagonal() * x;
  // Column scaling keeps the rank test meaningful for covariates on very different scales.
  Eigen::VectorXd scale(xs.cols());
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    const double nrm = xs.col(j).norm();
    scale(j) = nrm > 0.0 ? nrm : 1.0;
    xs.col(j) /= scale(j);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(kPivotTol);
  if (qr.rank() < xs.cols()) {
    std::ostringstream os;
    os << "rank-deficient design; collinear or constant columns:";
    const auto perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < xs.cols(); ++j) os << " " << names[static_cast<std::size_t>(perm(j))];
    throw NumericError("rank_deficient", os.str());
  }
  Eigen::MatrixXd b = qr.solve(sw.asDiagonal() * y);
  for (Eigen::Index j = 0; j < b.rows(); ++j) b.row(j) /= scale(j);
  return b;
}

}  // namespace

Eigen::VectorXd LinearProjection::fitted(const Eigen::MatrixXd& design) const {
  Eigen::VectorXd f = Eigen::VectorXd::Constant(design.rows(), intercept_value());
  if (design.cols() > 0) f += design * slopes();
  return f;
}

Eigen::VectorXd LinearProjection::residuals(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) const {
  return response - fitted(design);
}

Eigen::VectorXd LinearProjection::slopes() const {
  return intercept ? Eigen::VectorXd(coefficients.tail(coefficients.size() - 1)) : coefficients;
}

LinearProjection linear_projection(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                   const Eigen::VectorXd& weights, bool intercept,
                                   std::vector<std::string> labels) {
  LinearProjection lp;
  lp.intercept = intercept;
  lp.labels = full_labels(labels, design.cols(), intercept);
  lp.coefficients = wls_solve(with_intercept(design, intercept), response, weights, lp.labels).col(0);
  return lp;
}

Eigen::MatrixXd projection_coefficients(const Eigen::MatrixXd& design, const Eigen::MatrixXd& responses,
                                        const Eigen::VectorXd& weights, bool intercept,
                                        const std::vector<std::string>& labels) {
  return wls_solve(with_intercept(design, intercept), responses, weights,
                   full_labels(labels, design.cols(), intercept));
}

// ---------------------------------------------------------------------------
// Logit

Eigen::VectorXd PropensityModel::linear_predictor(const Eigen::MatrixXd& design) const {
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(design.rows(), intercept ? coefficients(0) : 0.0);
  if (design.cols() > 0) eta += design * coefficients.tail(design.cols());
  return eta;
}

Eigen::VectorXd PropensityModel::predict(const Eigen::MatrixXd& design) const {
  const Eigen::VectorXd eta = linear_predictor(design);
  return eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
}

PropensityModel logit_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                          const Eigen::VectorXd& weights, const LogitOptions& opt,
                          std::vector<std::string> names) {
  const Eigen::Index n = design.rows();
  if (labels.size() != n || weights.size() != n) throw ValidationError("shape", "logit_fit: row counts differ");
  double w1 = 0.0, w0 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels(i) != 0.0 && labels(i) != 1.0) throw ValidationError("bad_label", "logit_fit: labels must be 0/1");
    (labels(i) == 1.0 ? w1 : w0) += weights(i);
  }
  if (!(w1 > 0.0) || !(w0 > 0.0))
    throw EstimationError("one_class", "logit_fit: both label classes need positive weight");
  const double wtot = w1 + w0;

  const Eigen::MatrixXd x = with_intercept(design, opt.intercept);
  const Eigen::Index p = x.cols();
  PropensityModel m;
  m.intercept = opt.intercept;
  m.labels = full_labels(names, design.cols(), opt.intercept);
  m.coefficients = Eigen::VectorXd::Zero(p);
  if (opt.intercept) m.coefficients(0) = std::log(w1 / w0);

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, opt.ridge * wtot);
  if (opt.intercept) penalty(0) = 0.0;

  // Rank check up front so a singular design gets a named error instead of a divergence.
  (void)wls_solve(x, Eigen::VectorXd::Zero(n), weights, m.labels);

  Eigen::VectorXd prob(n);
  auto score_of = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = x * beta;
    for (Eigen::Index i = 0; i < n; ++i) prob(i) = 1.0 / (1.0 + std::exp(-eta(i)));
    Eigen::VectorXd r = weights.cwiseProduct(labels - prob);
    return Eigen::VectorXd(x.transpose() * r - penalty.cwiseProduct(beta));
  };

  Eigen::VectorXd score = score_of(m.coefficients);
  Eigen::MatrixXd info(p, p);
  auto loglik = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = x * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = eta(i);
      const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      ll += weights(i) * (labels(i) * e - log1pexp);
    }
    return ll - 0.5 * beta.dot(penalty.cwiseProduct(beta));
  };
  for (int it = 0; it <= opt.max_iter; ++it) {
    m.max_abs_score = score.cwiseAbs().maxCoeff() / wtot;
    const Eigen::VectorXd v = weights.cwiseProduct(prob.cwiseProduct((1.0 - prob.array()).matrix()));
    info = x.transpose() * v.asDiagonal() * x;
    info.diagonal() += penalty;
    Eigen::VectorXd step = info.ldlt().solve(score);
    // A small score alone is not enough: under separation the score vanishes
    // while Newton keeps pushing the coefficients outwards.
    if (m.max_abs_score <= opt.tol && step.norm() <= 1e-6 * (1.0 + m.coefficients.norm())) {
      m.converged = true;
      break;
    }
    if (it == opt.max_iter) break;
    // Step halving keeps the penalized log-likelihood from decreasing.
    const double ll0 = loglik(m.coefficients);
    Eigen::VectorXd next = m.coefficients + step;
    for (int h = 0; h < 30 && loglik(next) < ll0 - 1e-12 * std::abs(ll0); ++h) {
      step *= 0.5;
      next = m.coefficients + step;
    }
    m.coefficients = next;
    m.iterations = it + 1;
    if (!std::isfinite(m.coefficients.norm()) || m.coefficients.norm() > opt.divergence_norm)
      throw NumericError("separation",
                         "logit_fit: coefficients diverge (quasi-complete separation); trim the sample or set a ridge penalty");
    score = score_of(m.coefficients);
  }
  if (!m.converged) {
    bool saturated = false;
    for (Eigen::Index i = 0; i < n; ++i) saturated = saturated || prob(i) < 1e-12 || prob(i) > 1.0 - 1e-12;
    if (saturated)
      throw NumericError("separation",
                         "logit_fit: fitted probabilities reach 0 or 1 (quasi-complete separation); trim the sample or set a ridge penalty");
  }
  const Eigen::VectorXd v = weights.cwiseProduct(prob.cwiseProduct((1.0 - prob.array()).matrix()));
  info = x.transpose() * v.asDiagonal() * x;
  info.diagonal() += penalty;
  m.covariance = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  return m;
}

// ---------------------------------------------------------------------------

double std_diff(double mean_a, double var_a, double mean_b, double var_b) {
  if (var_a < 0.0 || var_b < 0.0) throw ValidationError("bad_variance", "std_diff: negative variance");
  if (mean_a == mean_b) return 0.0;
  const double pooled = std::sqrt((var_a + var_b) / 2.0);
  if (!(pooled > 0.0))
    throw NumericError("degenerate_covariate", "std_diff: zero pooled SD with unequal means");
  return (mean_a - mean_b) / pooled;
}

double kish_ess(const Eigen::VectorXd& weights) {
  const auto w = as_span(weights);
  const double s = kernels::sum(w);
  const double s2 = kernels::sumsq(w);
  if (!(s2 > 0.0)) throw ValidationError("zero_weights", "kish_ess: all weights are zero");
  return s * s / s2;
}

double weighted_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
  const double tw = kernels::sum(as_span(w));
  if (!(tw > 0.0)) throw ValidationError("zero_weights", "weighted_mean: weights sum to zero");
  return kernels::wsum(as_span(w), as_span(x)) / tw;
}

double weighted_var(const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
  const double m = weighted_mean(x, w);
  return kernels::wsumsq_dev(as_span(w), as_span(x), m) / kernels::sum(as_span(w));
}

}  // namespace ddiag
