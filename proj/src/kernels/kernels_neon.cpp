#include "ddiag/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace ddiag::kernels::detail {
namespace {

double sum_neon(const double* a, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vaddq_f64(acc0, vld1q_f64(a + i));
    acc1 = vaddq_f64(acc1, vld1q_f64(a + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i];
  return acc;
}

double sumsq_neon(const double* a, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float64x2_t x0 = vld1q_f64(a + i);
    const float64x2_t x1 = vld1q_f64(a + i + 2);
    acc0 = vfmaq_f64(acc0, x0, x0);
    acc1 = vfmaq_f64(acc1, x1, x1);
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * a[i];
  return acc;
}

double wsum_neon(const double* w, const double* a, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(w + i), vld1q_f64(a + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(w + i + 2), vld1q_f64(a + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += w[i] * a[i];
  return acc;
}

double wdot_neon(const double* w, const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float64x2_t wa0 = vmulq_f64(vld1q_f64(w + i), vld1q_f64(a + i));
    const float64x2_t wa1 = vmulq_f64(vld1q_f64(w + i + 2), vld1q_f64(a + i + 2));
    acc0 = vfmaq_f64(acc0, wa0, vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, wa1, vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc += w[i] * a[i] * b[i];
  return acc;
}

double wsumsq_dev_neon(const double* w, const double* a, double c, std::size_t n) {
  const float64x2_t cv = vdupq_n_f64(c);
  float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float64x2_t d0 = vsubq_f64(vld1q_f64(a + i), cv);
    const float64x2_t d1 = vsubq_f64(vld1q_f64(a + i + 2), cv);
    acc0 = vfmaq_f64(acc0, vmulq_f64(vld1q_f64(w + i), d0), d0);
    acc1 = vfmaq_f64(acc1, vmulq_f64(vld1q_f64(w + i + 2), d1), d1);
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) {
    const double d = a[i] - c;
    acc += w[i] * d * d;
  }
  return acc;
}

void add_inplace_neon(double* out, const double* a, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(out + i), vld1q_f64(a + i)));
  for (; i < n; ++i) out[i] += a[i];
}

void demean_column_neon(double* out, const double* col, const double* rowmean, double shift,
                        std::size_t n) {
  const float64x2_t sv = vdupq_n_f64(shift);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vsubq_f64(vsubq_f64(vld1q_f64(col + i), vld1q_f64(rowmean + i)), sv));
  for (; i < n; ++i) out[i] = col[i] - rowmean[i] - shift;
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable t{sum_neon,        sumsq_neon,       wsum_neon,
                             wdot_neon,       wsumsq_dev_neon,  add_inplace_neon,
                             demean_column_neon};
  return &t;
}

}  // namespace ddiag::kernels::detail

#else

namespace ddiag::kernels::detail {
const KernelTable* neon_table() { return nullptr; }
}  // namespace ddiag::kernels::detail

#endif
