#include <atomic>
#include <cassert>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "ddiag/kernels.hpp"

namespace ddiag::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa best_isa() {
  if (isa_supported(Isa::avx2)) return Isa::avx2;
  if (isa_supported(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

Isa initial_isa() {
  const char* env = std::getenv("DDIAG_SIMD");
  if (env == nullptr) return best_isa();
  const std::string v(env);
  if (v == "scalar") return Isa::scalar;
  if (v == "avx2" && isa_supported(Isa::avx2)) return Isa::avx2;
  if (v == "neon" && isa_supported(Isa::neon)) return Isa::neon;
  return best_isa();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{&table(initial_isa())};
  return slot;
}

std::atomic<Isa>& active_isa_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return detail::avx2_table() != nullptr && cpu_has_avx2();
    case Isa::neon:
      return detail::neon_table() != nullptr;
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_supported(isa))
    throw std::invalid_argument("SIMD variant not available: " + std::string(isa_name(isa)));
  switch (isa) {
    case Isa::avx2:
      return *detail::avx2_table();
    case Isa::neon:
      return *detail::neon_table();
    case Isa::scalar:
      break;
  }
  return detail::scalar_table();
}

Isa active_isa() { return active_isa_slot().load(); }

void set_active_isa(Isa isa) {
  const KernelTable& t = table(isa);
  active_slot().store(&t);
  active_isa_slot().store(isa);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

const KernelTable& active() { return *active_slot().load(std::memory_order_relaxed); }

double wsum(std::span<const double> w, std::span<const double> a) {
  assert(w.size() == a.size());
  return active().wsum(w.data(), a.data(), a.size());
}

double wdot(std::span<const double> w, std::span<const double> a, std::span<const double> b) {
  assert(w.size() == a.size() && a.size() == b.size());
  return active().wdot(w.data(), a.data(), b.data(), a.size());
}

double wsumsq_dev(std::span<const double> w, std::span<const double> a, double c) {
  assert(w.size() == a.size());
  return active().wsumsq_dev(w.data(), a.data(), c, a.size());
}

void add_inplace(std::span<double> out, std::span<const double> a) {
  assert(out.size() == a.size());
  active().add_inplace(out.data(), a.data(), a.size());
}

void demean_column(std::span<double> out, std::span<const double> col,
                   std::span<const double> rowmean, double shift) {
  assert(out.size() == col.size() && col.size() == rowmean.size());
  active().demean_column(out.data(), col.data(), rowmean.data(), shift, col.size());
}

}  // namespace ddiag::kernels
