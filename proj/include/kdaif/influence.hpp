#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdaif/model.hpp"
#include "kdaif/objective.hpp"
#include "kdaif/optimize.hpp"

namespace kdaif {

enum class IhvpMethod { dense_solve, conjugate_gradient };

std::string ihvp_method_name(IhvpMethod m);
IhvpMethod parse_ihvp_method(const std::string& name);

struct IhvpSolverConfig {
  IhvpMethod method = IhvpMethod::dense_solve;
  std::size_t cg_max_iters = 5000;
  double cg_tol = 1e-10;
  double damping = 1e-3;

  void validate() const;
};

struct SolveStats {
  std::size_t iterations = 0;
  double residual = 0.0;
  bool positive_definite = true;  // dense path: Cholesky succeeded
};

// x = (H + damping I)^{-1} rhs where H is the Hessian of `risk` at theta.
ParamVector solve_damped(const EmpiricalRisk& risk, std::span<const double> theta,
                         std::span<const double> rhs, const IhvpSolverConfig& solver,
                         SolveStats* stats = nullptr);

struct InfluenceMeta {
  double damping = 0.0;
  double l2_reg = 0.0;
  IhvpMethod solver = IhvpMethod::dense_solve;
  std::uint64_t val_fingerprint = 0;
  std::size_t n_val = 0;
  double grad_norm = 0.0;  // training-risk gradient norm at theta (stationarity)
  std::size_t solver_iterations = 0;
  double solver_residual = 0.0;
  bool hessian_positive_definite = true;
};

struct InfluenceReport {
  std::vector<double> phi;       // loss change on validation per unit upweight
  std::vector<double> phi_norm;  // phi / (std(phi) + 1e-12)
  std::vector<double> weights;   // in [0, 2]
  std::vector<double> epsilon;   // (w - 1) / N_train
  InfluenceMeta meta;

  std::size_t n_train() const { return phi.size(); }
};

// -grad l_val(z_val)^T (H + lambda I)^{-1} grad l_train(z_train), H the Hessian
// of the regularized mean training risk.
double influence_pair(const ExampleLosses& train, std::size_t train_index,
                      const ExampleLosses& val, std::size_t val_index,
                      std::span<const double> theta, double l2_reg,
                      const IhvpSolverConfig& solver);

// phi_i = mean_j influence_pair(i, j), computed with one solve against the mean
// validation gradient. Fills phi and meta only.
InfluenceReport influence_scores(const ExampleLosses& train, const ExampleLosses& val,
                                 std::span<const double> theta, double l2_reg,
                                 const IhvpSolverConfig& solver, std::size_t jobs = 1);

// Scale-only normalization; keeps signs and zeros.
std::vector<double> normalize_scores(std::span<const double> phi);

// 2 / (1 + e^x): strictly decreasing, maps 0 to 1, range (0, 2).
double weight_fn(double phi_norm);

std::vector<double> weights_to_epsilon(std::span<const double> weights, std::size_t n_train);

// phi_norm -> weights, epsilon.
void fill_weights(InfluenceReport& report);
// phi -> phi_norm -> weights, epsilon.
void assign_weights(InfluenceReport& report);

struct LooResult {
  double delta = 0.0;  // mean val loss after removal minus before
  double grad_norm = 0.0;
  bool converged = false;
};

// Leave-one-out retraining. Removing point i means giving it weight zero in
// (1/N) sum_j w_j l_j + (l2/2)|theta|^2, the exact epsilon_i = -1/N
// perturbation; every retrain starts from the same initial parameters.
class LooOracle {
 public:
  LooOracle(const ExampleLosses& train, const ExampleLosses& val, double l2_reg,
            ParamVector init, NewtonOptions options = {});

  const FitResult& base_fit() const { return base_; }
  double base_val_loss() const { return base_val_loss_; }
  LooResult delta(std::size_t index) const;
  std::vector<LooResult> sweep(std::span<const std::size_t> indices, std::size_t jobs = 1) const;

 private:
  double val_loss(std::span<const double> theta) const;

  const ExampleLosses* train_;
  const ExampleLosses* val_;
  double l2_;
  ParamVector init_;
  NewtonOptions options_;
  FitResult base_;
  double base_val_loss_ = 0.0;
};

// Model-level convenience: student loss L_S (teacher optional when alpha = 1),
// seeded initialization, damping and l2 from the config.
LooResult loo_oracle(std::span<const LabeledExample> train_set,
                     std::span<const LabeledExample> val_set, const MlpSpec& spec,
                     const TrainConfig& config, const Model* teacher, std::size_t index);

}  // namespace kdaif
