#pragma once
// Small literal datasets for unit tests.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ddiag/panel.hpp"

namespace testgen {

// One covariate per entry of xs (each n x T), no time-invariant covariates.
inline ddiag::PanelDataset make_panel(const Eigen::MatrixXd& y, const std::vector<int>& group,
                                      const std::vector<Eigen::MatrixXd>& xs = {},
                                      const Eigen::VectorXd& weight = Eigen::VectorXd(),
                                      const Eigen::MatrixXd& z = Eigen::MatrixXd()) {
  ddiag::PanelParts p;
  const auto n = y.rows();
  for (Eigen::Index i = 0; i < n; ++i) p.unit_ids.push_back("u" + std::to_string(100 + i));
  for (Eigen::Index t = 0; t < y.cols(); ++t) p.periods.push_back(static_cast<int>(t + 1));
  p.outcome = y;
  p.group = group;
  p.tv = xs;
  for (std::size_t j = 0; j < xs.size(); ++j) p.tv_names.push_back("x" + std::to_string(j + 1));
  p.ti = z.size() ? z : Eigen::MatrixXd(n, 0);
  for (Eigen::Index j = 0; j < p.ti.cols(); ++j) p.ti_names.push_back("z" + std::to_string(j + 1));
  p.weight = weight.size() ? weight : Eigen::VectorXd::Ones(n);
  return ddiag::PanelDataset(std::move(p));
}

// Weighted least squares by explicit normal equations (test oracle).
inline Eigen::VectorXd normal_eq(const Eigen::MatrixXd& a, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  return (a.transpose() * w.asDiagonal() * a).ldlt().solve(a.transpose() * w.cwiseProduct(y));
}

inline Eigen::MatrixXd with_ones(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd a(x.rows(), x.cols() + 1);
  a << Eigen::VectorXd::Ones(x.rows()), x;
  return a;
}

}  // namespace testgen
