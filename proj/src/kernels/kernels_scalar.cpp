#include "kdaif/kernels.hpp"

namespace kdaif::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, const double* x, const double* b, double* y, std::size_t rows,
                 std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double acc = dot_scalar(w + r * cols, x, cols);
    y[r] = b ? acc + b[r] : acc;
  }
}

void gemv_t_acc_scalar(const double* w, const double* d, double* out, std::size_t rows,
                       std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(d[r], w + r * cols, out, cols);
}

void ger_acc_scalar(const double* d, const double* x, double* g, std::size_t rows,
                    std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(d[r], x, g + r * cols, cols);
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar,  dot_scalar,        axpy_scalar,
                                 gemv_scalar,  gemv_t_acc_scalar, ger_acc_scalar};
  return table;
}

}  // namespace kdaif::kernels
