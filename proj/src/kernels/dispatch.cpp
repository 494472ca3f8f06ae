#include <atomic>
#include <cstdlib>
#include <string>

#include "kdaif/error.hpp"
#include "kdaif/kernels.hpp"

namespace kdaif::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(KDAIF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* default_table() {
  if (const char* env = std::getenv("KDAIF_SIMD"); env && *env && std::string_view(env) != "auto") {
    return &table_for(parse_isa(env));
  }
#if defined(KDAIF_HAVE_AVX2)
  if (cpu_has_avx2()) return &avx2_table();
#endif
#if defined(KDAIF_HAVE_NEON)
  return &neon_table();
#endif
  return &scalar_table();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{default_table()};
  return slot;
}

}  // namespace

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return cpu_has_avx2();
    case Isa::neon:
#if defined(KDAIF_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table_for(Isa isa) {
  if (!isa_available(isa)) {
    throw InputError("kernel ISA '" + std::string(isa_name(isa)) + "' is not available");
  }
  switch (isa) {
#if defined(KDAIF_HAVE_AVX2)
    case Isa::avx2:
      return avx2_table();
#endif
#if defined(KDAIF_HAVE_NEON)
    case Isa::neon:
      return neon_table();
#endif
    default:
      return scalar_table();
  }
}

const KernelTable& active() { return *active_slot().load(std::memory_order_acquire); }

Isa active_isa() { return active().isa; }

void set_active_isa(Isa isa) { active_slot().store(&table_for(isa), std::memory_order_release); }

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

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  if (name == "neon") return Isa::neon;
  throw InputError("unknown kernel ISA '" + std::string(name) + "'");
}

}  // namespace kdaif::kernels
