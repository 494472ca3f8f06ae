#include "kdaif/robust_risk.hpp"

#include <algorithm>
#include <cmath>

#include "kdaif/error.hpp"

namespace kdaif {

void DualRiskConfig::validate() const {
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw InputError("delta must be a nonnegative number");
  if (!(eta_range_factor > 0.0)) throw InputError("eta_range_factor must be positive");
  if (!(tol > 0.0)) throw InputError("tol must be positive");
}

double dual_objective(std::span<const double> losses, std::span<const double> weights,
                      double delta, double eta) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double e = std::max(0.0, losses[i] - eta);
    num += w * e * e;
    den += w;
  }
  return std::sqrt(2.0 * delta + 1.0) * std::sqrt(num / den) + eta;
}

RobustRiskReport dual_worst_case_risk(std::span<const double> losses, const DualRiskConfig& config,
                                      std::span<const double> weights) {
  config.validate();
  if (losses.empty()) throw InputError("no losses given");
  if (!weights.empty() && weights.size() != losses.size()) {
    throw InputError("weights must align with losses");
  }
  double wsum = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!std::isfinite(losses[i])) throw InputError("losses must be finite");
    if (!weights.empty()) {
      if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) throw InputError("weights must be nonnegative");
      wsum += weights[i];
    }
  }
  if (!weights.empty() && wsum <= 0.0) throw InputError("weights sum to zero");

  const auto [lmin_it, lmax_it] = std::minmax_element(losses.begin(), losses.end());
  const double lmin = *lmin_it;
  const double lmax = *lmax_it;
  const double range = config.eta_range_factor * (lmax - lmin + 1.0);
  const auto f = [&](double eta) { return dual_objective(losses, weights, config.delta, eta); };

  // Golden-section search; the objective is convex in eta.
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lmin - range;
  double b = lmax;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > config.tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }

  RobustRiskReport r;
  r.eta_star = 0.5 * (a + b);
  r.dual_value = f(r.eta_star);
  // Candidates at the ends of the interval (constant losses put eta* at max L).
  if (const double fb = f(lmax); fb < r.dual_value) {
    r.dual_value = fb;
    r.eta_star = lmax;
  }
  r.eta_at_lower_bound = r.eta_star - (lmin - range) <= 1e3 * config.tol;
  r.delta = config.delta;
  double s = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) s += (weights.empty() ? 1.0 : weights[i]) * losses[i];
  r.mean_loss = s / (weights.empty() ? static_cast<double>(losses.size()) : wsum);
  return r;
}

double lipschitz_bound(double sigma, double delta, std::size_t n_train, double phi_norm) {
  if (n_train == 0) throw InputError("N_train must be positive");
  return sigma * std::sqrt(2.0 * delta + 1.0) / static_cast<double>(n_train) * phi_norm;
}

Theorem1Check check_theorem1(std::span<const double> phi, std::span<const double> epsilon) {
  if (phi.size() != epsilon.size()) throw InputError("phi and epsilon differ in length");
  Theorem1Check out;
  std::optional<std::size_t> first_nonzero_phi;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double prod = epsilon[i] * phi[i];
    out.inner_product += prod;
    if (prod > 0.0 && !out.witness) out.witness = i;
    if (phi[i] != 0.0 && !first_nonzero_phi) first_nonzero_phi = i;
  }
  if (out.witness) {
    out.passed = false;
  } else if (first_nonzero_phi && !(out.inner_product < 0.0)) {
    out.passed = false;
    out.witness = first_nonzero_phi;
  }
  return out;
}

Theorem1Check check_theorem1(std::span<const double> phi,
                             const std::function<double(double)>& epsilon_fn) {
  std::vector<double> eps(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) eps[i] = epsilon_fn(phi[i]);
  return check_theorem1(phi, eps);
}

namespace {

double max_abs_derivative(const std::function<double(double)>& f, double lo, double hi,
                          double step) {
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 0.5));
  double sigma = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double x = lo + static_cast<double>(k) * step;
    const double d = (f(x + step) - f(x - step)) / (2.0 * step);
    sigma = std::max(sigma, std::abs(d));
  }
  return sigma;
}

}  // namespace

GradientBound weight_gradient_bound(const std::function<double(double)>& f, SampleGrid grid) {
  if (!(grid.lo <= -10.0 && grid.hi >= 10.0)) throw InputError("grid must cover [-10, 10]");
  if (!(grid.step > 0.0 && grid.step <= 1e-3)) throw InputError("grid step must be in (0, 1e-3]");
  GradientBound out;
  out.sigma = max_abs_derivative(f, grid.lo, grid.hi, grid.step);
  out.refined_sigma = max_abs_derivative(f, grid.lo, grid.hi, grid.step / 10.0);
  // A smooth map's estimate settles; a jump's grows like 1/step.
  out.unbounded = out.refined_sigma > 2.0 * out.sigma + 1e-9;
  return out;
}

}  // namespace kdaif
