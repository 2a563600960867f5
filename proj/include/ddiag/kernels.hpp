#pragma once
// Data-parallel reductions used by the estimators.
//
// Every kernel has a scalar reference implementation. AVX2 (x86-64) and NEON
// (aarch64) variants are compiled when the target allows it and selected at
// runtime. The DDIAG_SIMD environment variable ("scalar", "avx2", "neon",
// "auto") overrides the automatic choice.

#include <cstddef>
#include <span>
#include <string_view>

namespace ddiag::kernels {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  double (*sum)(const double* a, std::size_t n);
  double (*sumsq)(const double* a, std::size_t n);
  // sum_i w_i a_i
  double (*wsum)(const double* w, const double* a, std::size_t n);
  // sum_i w_i a_i b_i
  double (*wdot)(const double* w, const double* a, const double* b, std::size_t n);
  // sum_i w_i (a_i - c)^2
  double (*wsumsq_dev)(const double* w, const double* a, double c, std::size_t n);
  // out_i += a_i
  void (*add_inplace)(double* out, const double* a, std::size_t n);
  // out_i = col_i - rowmean_i - shift
  void (*demean_column)(double* out, const double* col, const double* rowmean, double shift,
                        std::size_t n);
};

bool isa_supported(Isa isa);
const KernelTable& table(Isa isa);
Isa active_isa();
// Throws std::invalid_argument when the ISA is not available on this machine.
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);

const KernelTable& active();

inline double sum(std::span<const double> a) { return active().sum(a.data(), a.size()); }
inline double sumsq(std::span<const double> a) { return active().sumsq(a.data(), a.size()); }
double wsum(std::span<const double> w, std::span<const double> a);
double wdot(std::span<const double> w, std::span<const double> a, std::span<const double> b);
double wsumsq_dev(std::span<const double> w, std::span<const double> a, double c);
void add_inplace(std::span<double> out, std::span<const double> a);
void demean_column(std::span<double> out, std::span<const double> col,
                   std::span<const double> rowmean, double shift);

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
const KernelTable* neon_table();
}  // namespace detail

}  // namespace ddiag::kernels
