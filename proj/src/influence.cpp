#include "kdaif/influence.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>

#include "kdaif/error.hpp"
#include "kdaif/kernels.hpp"
#include "kdaif/stats.hpp"

namespace kdaif {

std::string ihvp_method_name(IhvpMethod m) {
  return m == IhvpMethod::dense_solve ? "dense" : "cg";
}

IhvpMethod parse_ihvp_method(const std::string& name) {
  if (name == "dense" || name == "dense_solve") return IhvpMethod::dense_solve;
  if (name == "cg" || name == "conjugate_gradient") return IhvpMethod::conjugate_gradient;
  throw InputError("unknown solver '" + name + "'");
}

void IhvpSolverConfig::validate() const {
  if (!(cg_tol > 0.0)) throw InputError("cg_tol must be positive");
  if (cg_max_iters == 0) throw InputError("cg_max_iters must be positive");
  if (!(damping >= 0.0)) throw InputError("damping must be nonnegative");
}

ParamVector solve_damped(const EmpiricalRisk& risk, std::span<const double> theta,
                         std::span<const double> rhs, const IhvpSolverConfig& solver,
                         SolveStats* stats) {
  solver.validate();
  SolveStats local;
  ParamVector x;
  if (solver.method == IhvpMethod::dense_solve) {
    const Eigen::MatrixXd h = risk.dense_hessian(theta, solver.damping).matrix;
    const Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    Eigen::VectorXd sol;
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() == Eigen::Success) {
      sol = llt.solve(b);
    } else {
      // Indefinite away from an optimum; LU still gives the damped Newton direction.
      local.positive_definite = false;
      sol = h.partialPivLu().solve(b);
    }
    local.residual = (h * sol - b).norm();
    x = ParamVector(std::vector<double>(sol.data(), sol.data() + sol.size()));
  } else {
    const auto apply = [&](std::span<const double> v) { return risk.hvp(theta, v, solver.damping); };
    CgResult cg = conjugate_gradient(apply, rhs, solver.cg_max_iters, solver.cg_tol);
    local.iterations = cg.iterations;
    local.residual = cg.residual;
    x = std::move(cg.x);
  }
  if (!x.all_finite()) throw NumericError("non-finite inverse-Hessian-vector product");
  if (stats) *stats = local;
  return x;
}

namespace {

ParamVector single_gradient(const ExampleLosses& losses, std::size_t i,
                            std::span<const double> theta) {
  ParamVector g(losses.dim());
  losses.accumulate_gradient(i, theta, 1.0, g.span());
  return g;
}

void check_compatible(const ExampleLosses& train, const ExampleLosses& val,
                      std::span<const double> theta) {
  if (train.dim() != val.dim() || theta.size() != train.dim()) {
    throw InputError("training, validation and parameter dimensions disagree");
  }
  if (val.size() == 0) throw InputError("validation set is empty");
  if (train.size() == 0) throw InputError("training set is empty");
}

}  // namespace

double influence_pair(const ExampleLosses& train, std::size_t train_index,
                      const ExampleLosses& val, std::size_t val_index,
                      std::span<const double> theta, double l2_reg,
                      const IhvpSolverConfig& solver) {
  check_compatible(train, val, theta);
  if (train_index >= train.size() || val_index >= val.size()) throw InputError("index out of range");
  const EmpiricalRisk risk(train, l2_reg);
  const ParamVector gv = single_gradient(val, val_index, theta);
  const ParamVector s = solve_damped(risk, theta, gv.span(), solver);
  const ParamVector gt = single_gradient(train, train_index, theta);
  return -kernels::dot(s.span(), gt.span());
}

InfluenceReport influence_scores(const ExampleLosses& train, const ExampleLosses& val,
                                 std::span<const double> theta, double l2_reg,
                                 const IhvpSolverConfig& solver, std::size_t jobs) {
  check_compatible(train, val, theta);
  const EmpiricalRisk risk(train, l2_reg);
  const ParamVector gval = mean_gradient(val, theta);
  SolveStats stats;
  const ParamVector s = solve_damped(risk, theta, gval.span(), solver, &stats);

  InfluenceReport report;
  report.phi.assign(train.size(), 0.0);
  parallel_for(train.size(), jobs, [&](std::size_t i) {
    const ParamVector gt = single_gradient(train, i, theta);
    report.phi[i] = -kernels::dot(s.span(), gt.span());
  });

  auto& m = report.meta;
  m.damping = solver.damping;
  m.l2_reg = l2_reg;
  m.solver = solver.method;
  m.val_fingerprint = val.fingerprint();
  m.n_val = val.size();
  m.grad_norm = risk.gradient(theta).norm();
  m.solver_iterations = stats.iterations;
  m.solver_residual = stats.residual;
  m.hessian_positive_definite = stats.positive_definite;
  return report;
}

std::vector<double> normalize_scores(std::span<const double> phi) {
  if (phi.empty()) throw InputError("no influence scores to normalize");
  const double scale = population_std(phi) + 1e-12;
  std::vector<double> out(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) out[i] = phi[i] / scale;
  return out;
}

double weight_fn(double phi_norm) { return 2.0 / (1.0 + std::exp(phi_norm)); }

std::vector<double> weights_to_epsilon(std::span<const double> weights, std::size_t n_train) {
  if (n_train == 0) throw InputError("N_train must be positive");
  std::vector<double> eps(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0 && weights[i] <= 2.0)) {
      throw InputError("weight " + std::to_string(weights[i]) + " outside [0, 2]");
    }
    eps[i] = (weights[i] - 1.0) / static_cast<double>(n_train);
  }
  return eps;
}

void fill_weights(InfluenceReport& report) {
  report.weights.resize(report.phi_norm.size());
  for (std::size_t i = 0; i < report.phi_norm.size(); ++i) {
    report.weights[i] = weight_fn(report.phi_norm[i]);
  }
  report.epsilon = weights_to_epsilon(report.weights, report.weights.size());
}

void assign_weights(InfluenceReport& report) {
  report.phi_norm = normalize_scores(report.phi);
  fill_weights(report);
}

LooOracle::LooOracle(const ExampleLosses& train, const ExampleLosses& val, double l2_reg,
                     ParamVector init, NewtonOptions options)
    : train_(&train), val_(&val), l2_(l2_reg), init_(std::move(init)), options_(options) {
  check_compatible(train, val, init_.span());
  base_ = minimize_newton(EmpiricalRisk(train, l2_), init_, options_);
  base_val_loss_ = val_loss(base_.params.span());
}

double LooOracle::val_loss(std::span<const double> theta) const {
  return EmpiricalRisk(*val_).value(theta);
}

LooResult LooOracle::delta(std::size_t index) const {
  if (index >= train_->size()) throw InputError("LOO index out of range");
  std::vector<double> w(train_->size(), 1.0);
  w[index] = 0.0;
  const FitResult fit = minimize_newton(EmpiricalRisk(*train_, l2_, std::move(w)), init_, options_);
  return LooResult{val_loss(fit.params.span()) - base_val_loss_, fit.grad_norm, fit.converged};
}

std::vector<LooResult> LooOracle::sweep(std::span<const std::size_t> indices,
                                        std::size_t jobs) const {
  std::vector<LooResult> out(indices.size());
  parallel_for(indices.size(), jobs, [&](std::size_t k) { out[k] = delta(indices[k]); });
  return out;
}

LooResult loo_oracle(std::span<const LabeledExample> train_set,
                     std::span<const LabeledExample> val_set, const MlpSpec& spec,
                     const TrainConfig& config, const Model* teacher, std::size_t index) {
  const MlpLosses train = student_losses(spec, teacher, train_set, config.alpha);
  const MlpLosses val = student_losses(spec, teacher, val_set, config.alpha);
  const LooOracle oracle(train, val, config.l2_reg, init_params(spec, config.seed));
  return oracle.delta(index);
}

}  // namespace kdaif
