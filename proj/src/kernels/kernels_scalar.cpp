#include "ddiag/kernels.hpp"

namespace ddiag::kernels::detail {
namespace {

double sum_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double sumsq_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
  return acc;
}

double wsum_scalar(const double* w, const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += w[i] * a[i];
  return acc;
}

double wdot_scalar(const double* w, const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += w[i] * a[i] * b[i];
  return acc;
}

double wsumsq_dev_scalar(const double* w, const double* a, double c, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - c;
    acc += w[i] * d * d;
  }
  return acc;
}

void add_inplace_scalar(double* out, const double* a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i];
}

void demean_column_scalar(double* out, const double* col, const double* rowmean, double shift,
                          std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = col[i] - rowmean[i] - shift;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{sum_scalar,         sumsq_scalar,       wsum_scalar,
                             wdot_scalar,        wsumsq_dev_scalar,  add_inplace_scalar,
                             demean_column_scalar};
  return t;
}

}  // namespace ddiag::kernels::detail
