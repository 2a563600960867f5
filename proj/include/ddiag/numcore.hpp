#pragma once
// Weighted least squares, logit fitting and the small statistics used by the
// balance diagnostics.

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace ddiag {

struct LinearProjection {
  Eigen::VectorXd coefficients;  // intercept first when present
  std::vector<std::string> labels;
  bool intercept = true;

  Eigen::VectorXd fitted(const Eigen::MatrixXd& design) const;
  Eigen::VectorXd residuals(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) const;
  // Slope part only (coefficients without the intercept).
  Eigen::VectorXd slopes() const;
  double intercept_value() const { return intercept ? coefficients(0) : 0.0; }
};

// Weighted projection of response on (1, design). Rank deficiency throws
// NumericError naming the dependent columns.
LinearProjection linear_projection(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                   const Eigen::VectorXd& weights, bool intercept = true,
                                   std::vector<std::string> labels = {});

// Multiple responses sharing one design; column j of the result holds the
// coefficients for response column j.
Eigen::MatrixXd projection_coefficients(const Eigen::MatrixXd& design, const Eigen::MatrixXd& responses,
                                        const Eigen::VectorXd& weights, bool intercept,
                                        const std::vector<std::string>& labels = {});

struct LogitOptions {
  double ridge = 0.0;  // penalty on slopes only
  int max_iter = 100;
  double tol = 1e-8;  // on max |score| / sum(w)
  double divergence_norm = 1e3;
  bool intercept = true;
};

struct PropensityModel {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;  // inverse weighted information at the optimum
  bool converged = false;
  int iterations = 0;
  double max_abs_score = 0.0;
  bool intercept = true;
  std::vector<std::string> labels;

  Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& design) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const;
};

PropensityModel logit_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                          const Eigen::VectorXd& weights, const LogitOptions& options = {},
                          std::vector<std::string> names = {});

// (mean_a - mean_b) / sqrt((var_a + var_b) / 2). Equal means give 0; a zero
// pooled SD with unequal means throws NumericError.
double std_diff(double mean_a, double var_a, double mean_b, double var_b);

double kish_ess(const Eigen::VectorXd& weights);

double weighted_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& w);
// Denominator sum(w).
double weighted_var(const Eigen::VectorXd& x, const Eigen::VectorXd& w);

}  // namespace ddiag
