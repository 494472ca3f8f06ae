#include "kdaif/optimize.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>

#include "kdaif/error.hpp"
#include "kdaif/kernels.hpp"

namespace kdaif {

FitResult minimize_newton(const EmpiricalRisk& risk, ParamVector start,
                          const NewtonOptions& options) {
  FitResult res{std::move(start)};
  const std::size_t p = risk.dim();
  double f = risk.value(res.params.span());
  for (; res.iterations < options.max_iters; ++res.iterations) {
    const ParamVector g = risk.gradient(res.params.span());
    res.grad_norm = g.norm();
    if (res.grad_norm <= options.grad_tol) {
      res.converged = true;
      break;
    }
    const Eigen::MatrixXd h = risk.dense_hessian(res.params.span()).matrix;
    const Eigen::Map<const Eigen::VectorXd> gv(g.data(), static_cast<Eigen::Index>(p));
    Eigen::VectorXd step;
    for (double shift = 0.0;; shift = shift == 0.0 ? options.min_shift : shift * 10.0) {
      Eigen::MatrixXd shifted = h;
      shifted.diagonal().array() += shift;
      Eigen::LLT<Eigen::MatrixXd> llt(shifted);
      if (llt.info() == Eigen::Success) {
        step = -llt.solve(gv);
        break;
      }
      if (shift > 1e12) throw SolverError("Newton: could not shift Hessian to positive definite", res.grad_norm, res.iterations);
    }
    const double slope = gv.dot(step);
    double t = 1.0;
    ParamVector trial(p);
    double ft = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      for (std::size_t j = 0; j < p; ++j) trial[j] = res.params[j] + t * step(static_cast<Eigen::Index>(j));
      ft = risk.value(trial.span());
      if (std::isfinite(ft) && ft <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      // Near the optimum the predicted decrease falls below the rounding of f;
      // judge the step by the gradient instead.
      if (std::isfinite(ft) && ft - f <= 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f)) &&
          risk.gradient(trial.span()).norm() < res.grad_norm) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // Rounding floor: no representable decrease left along the Newton step.
      res.converged = res.grad_norm <= 1e3 * options.grad_tol;
      break;
    }
    res.params = std::move(trial);
    f = ft;
  }
  if (!res.converged) {
    res.grad_norm = risk.gradient(res.params.span()).norm();
    res.converged = res.grad_norm <= options.grad_tol;
  }
  res.value = risk.value(res.params.span());
  return res;
}

CgResult conjugate_gradient(const LinearOperator& apply, std::span<const double> b,
                            std::size_t max_iters, double tol) {
  const std::size_t n = b.size();
  CgResult res{ParamVector(n)};
  std::vector<double> r(b.begin(), b.end());
  std::vector<double> p = r;
  const double b_norm = std::sqrt(kernels::dot(b, b));
  double rr = kernels::dot(r, r);
  res.residual = std::sqrt(rr);
  if (b_norm == 0.0) {
    res.converged = true;
    return res;
  }
  while (res.iterations < max_iters) {
    if (std::sqrt(rr) <= tol * b_norm) break;
    const ParamVector ap = apply(p);
    const double curvature = kernels::dot(p, ap.span());
    if (!(curvature > 0.0)) {
      throw SolverError("conjugate gradient met non-positive curvature", std::sqrt(rr),
                        res.iterations);
    }
    const double step = rr / curvature;
    kernels::axpy(step, p, res.x.span());
    kernels::axpy(-step, ap.span(), r);
    const double rr_next = kernels::dot(r, r);
    const double beta = rr_next / rr;
    rr = rr_next;
    for (std::size_t j = 0; j < n; ++j) p[j] = r[j] + beta * p[j];
    ++res.iterations;
  }
  res.residual = std::sqrt(rr);
  res.converged = res.residual <= tol * b_norm;
  if (!res.converged) {
    throw SolverError("conjugate gradient did not converge in " + std::to_string(max_iters) +
                          " iterations (residual " + std::to_string(res.residual) + ")",
                      res.residual, res.iterations);
  }
  return res;
}

}  // namespace kdaif
