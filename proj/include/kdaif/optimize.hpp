#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "kdaif/model.hpp"
#include "kdaif/objective.hpp"

namespace kdaif {

struct NewtonOptions {
  std::size_t max_iters = 100;
  double grad_tol = 1e-10;
  // Smallest shift tried when H is not positive definite; grows by 10x.
  double min_shift = 1e-8;
};

struct FitResult {
  ParamVector params;
  double grad_norm = 0.0;
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Full-batch Newton with a shifted Hessian and Armijo backtracking. Intended
// for the small convex problems the leave-one-out oracle retrains.
FitResult minimize_newton(const EmpiricalRisk& risk, ParamVector start,
                          const NewtonOptions& options = {});

struct CgResult {
  ParamVector x;
  std::size_t iterations = 0;
  double residual = 0.0;  // ||b - A x||
  bool converged = false;
};

using LinearOperator = std::function<ParamVector(std::span<const double>)>;

// Conjugate gradient on a symmetric positive definite operator. Stops when
// ||r|| <= tol * ||b||. Throws SolverError on non-convergence or when a search
// direction has non-positive curvature.
CgResult conjugate_gradient(const LinearOperator& apply, std::span<const double> b,
                            std::size_t max_iters, double tol);

}  // namespace kdaif
