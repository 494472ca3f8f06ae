#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>

namespace kdaif {

struct DualRiskConfig {
  double delta = 0.0;             // chi-square radius
  double eta_range_factor = 20.0;  // eta in [min L - R, max L], R = factor (max L - min L + 1)
  double tol = 1e-8;              // golden-section interval width

  void validate() const;
};

struct RobustRiskReport {
  double dual_value = 0.0;
  double eta_star = 0.0;
  bool eta_at_lower_bound = false;  // infimum may lie further out (e.g. delta = 0)
  double mean_loss = 0.0;
  double delta = 0.0;
  double sigma = 0.0;            // gradient bound of the weight map
  double lipschitz_bound = 0.0;  // sigma sqrt(2 delta + 1) / N_train |Phi|
};

// sqrt(2 delta + 1) E[(L - eta)_+^2]^{1/2} + eta; expectation weighted by
// `weights` (normalized) when given, uniform otherwise.
double dual_objective(std::span<const double> losses, std::span<const double> weights,
                      double delta, double eta);

// Worst-case expected loss over the chi-square ball of radius delta around the
// empirical distribution, via the convex dual minimized by golden-section search.
RobustRiskReport dual_worst_case_risk(std::span<const double> losses, const DualRiskConfig& config,
                                      std::span<const double> weights = {});

double lipschitz_bound(double sigma, double delta, std::size_t n_train, double phi_norm);

struct Theorem1Check {
  bool passed = true;
  std::optional<std::size_t> witness;  // first offending index
  double inner_product = 0.0;          // sum_i eps_i phi_i
};

// eps_i phi_i <= 0 for every i, and sum_i eps_i phi_i < 0 whenever phi != 0.
Theorem1Check check_theorem1(std::span<const double> phi, std::span<const double> epsilon);
Theorem1Check check_theorem1(std::span<const double> phi,
                             const std::function<double(double)>& epsilon_fn);

struct SampleGrid {
  double lo = -10.0;
  double hi = 10.0;
  double step = 1e-3;
};

struct GradientBound {
  double sigma = 0.0;          // max |f'| at the requested grid step
  double refined_sigma = 0.0;  // same on a 10x finer grid
  bool unbounded = false;      // bound grows with refinement (a jump)
};

// max |f'| by central differences; the grid must cover [-10, 10] with step <= 1e-3.
GradientBound weight_gradient_bound(const std::function<double(double)>& f, SampleGrid grid = {});

}  // namespace kdaif
