#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Dense inner loops used by the MLP forward/backward passes and by the
// iterative solvers. Each instruction set provides the same table; one table
// is active per process. Results across tables agree to rounding, not bits
// (the SIMD variants reassociate sums and use fused multiply-add).
namespace kdaif::kernels {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = W x + b, W row-major rows x cols; b may be null
  void (*gemv)(const double* w, const double* x, const double* b, double* y, std::size_t rows,
               std::size_t cols);
  // out += W^T d
  void (*gemv_t_acc)(const double* w, const double* d, double* out, std::size_t rows,
                     std::size_t cols);
  // G += d x^T
  void (*ger_acc)(const double* d, const double* x, double* g, std::size_t rows, std::size_t cols);
};

const KernelTable& scalar_table();
#if defined(KDAIF_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(KDAIF_HAVE_NEON)
const KernelTable& neon_table();
#endif

// Compiled in and supported by the running CPU.
bool isa_available(Isa isa);

// Table for a specific ISA; throws InputError when unavailable.
const KernelTable& table_for(Isa isa);

// Process-wide active table. Selected on first use: the KDAIF_SIMD environment
// variable (scalar|avx2|neon|auto) wins, otherwise the widest available ISA.
const KernelTable& active();
Isa active_isa();
void set_active_isa(Isa isa);

std::string_view isa_name(Isa isa);
Isa parse_isa(std::string_view name);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace kdaif::kernels
