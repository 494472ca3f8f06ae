#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kdaif/model.hpp"

namespace kdaif {

// A family of per-example losses l_i(theta) over one flat parameter vector.
// Implementations must be safe for concurrent const use.
class ExampleLosses {
 public:
  virtual ~ExampleLosses() = default;

  virtual std::size_t size() const = 0;
  virtual std::size_t dim() const = 0;
  virtual double loss(std::size_t i, std::span<const double> theta) const = 0;
  // out += scale * grad l_i(theta)
  virtual void accumulate_gradient(std::size_t i, std::span<const double> theta, double scale,
                                   std::span<double> out) const = 0;
  // Layer owning a coordinate, for diagnostics; -1 when meaningless.
  virtual int layer_of(std::size_t /*coord*/) const { return -1; }
  // Stable hash of the examples and targets.
  virtual std::uint64_t fingerprint() const = 0;
};

// What one example asks of the model output o = softmax(z):
//   l = -sum_c target_c * log(clip(o_c)) + sum_c linear_cost_c * o_c
// A one-hot target gives cross-entropy; a teacher distribution gives the
// distillation term for the student; a linear cost of -log(student output)
// gives the distillation term as seen by the teacher (student held fixed).
struct OutputObjective {
  std::vector<double> target;
  std::vector<double> linear_cost;  // empty means zero
};

class MlpLosses final : public ExampleLosses {
 public:
  MlpLosses(MlpSpec spec, std::vector<std::vector<double>> inputs,
            std::vector<OutputObjective> objectives);

  std::size_t size() const override { return inputs_.size(); }
  std::size_t dim() const override { return spec_.param_count(); }
  double loss(std::size_t i, std::span<const double> theta) const override;
  void accumulate_gradient(std::size_t i, std::span<const double> theta, double scale,
                           std::span<double> out) const override;
  int layer_of(std::size_t coord) const override { return spec_.layer_of(coord); }
  std::uint64_t fingerprint() const override;

  const MlpSpec& spec() const { return spec_; }
  const std::vector<double>& input(std::size_t i) const { return inputs_[i]; }
  const OutputObjective& objective(std::size_t i) const { return objectives_[i]; }

  // Append the examples of another family over the same spec.
  void append(const MlpLosses& other);

 private:
  MlpSpec spec_;
  std::vector<std::vector<double>> inputs_;
  std::vector<OutputObjective> objectives_;
};

// l_i = ||theta - c_i||^2 / 2. Toy family with closed-form Hessian (identity).
class QuadraticLosses final : public ExampleLosses {
 public:
  explicit QuadraticLosses(std::vector<std::vector<double>> centers);
  std::size_t size() const override { return centers_.size(); }
  std::size_t dim() const override { return dim_; }
  double loss(std::size_t i, std::span<const double> theta) const override;
  void accumulate_gradient(std::size_t i, std::span<const double> theta, double scale,
                           std::span<double> out) const override;
  std::uint64_t fingerprint() const override;

 private:
  std::vector<std::vector<double>> centers_;
  std::size_t dim_;
};

// Objective builders. `indices` selects examples; empty means all of them.
// Student side of L_S: target = (1-alpha) T(x) + alpha onehot(y); the teacher
// output is a constant. A null teacher requires alpha == 1.
MlpLosses student_losses(const MlpSpec& student, const Model* teacher,
                         std::span<const LabeledExample> examples, double alpha,
                         std::span<const std::size_t> indices = {});
// Teacher side of L_T: target = alpha onehot(y), linear cost = -(1-alpha) log S(x);
// the student output is a constant.
MlpLosses teacher_losses(const MlpSpec& teacher, const Model& student,
                         std::span<const LabeledExample> examples, double alpha,
                         std::span<const std::size_t> indices = {});
// Plain cross-entropy against labels.
MlpLosses supervised_losses(const MlpSpec& spec, std::span<const LabeledExample> examples,
                            std::span<const std::size_t> indices = {});
// Cross-entropy against soft targets, scaled by `scale`.
MlpLosses soft_target_losses(const MlpSpec& spec, std::span<const std::vector<double>> inputs,
                             std::span<const SoftLabel> targets, double scale);

struct DenseHessian {
  Eigen::MatrixXd matrix;  // symmetrized, damping added
  double asymmetry = 0.0;  // max |A - A^T| before symmetrization
};

// R(theta) = (1/N) sum_i w_i l_i(theta) + (l2/2) ||theta||^2 over a subset of
// examples (all when `subset` is empty); N is the subset size.
class EmpiricalRisk {
 public:
  EmpiricalRisk(const ExampleLosses& losses, double l2_reg = 0.0,
                std::vector<double> weights = {}, std::vector<std::size_t> subset = {});
  // The losses are held by reference.
  EmpiricalRisk(ExampleLosses&&, double = 0.0, std::vector<double> = {}, std::vector<std::size_t> = {}) = delete;

  std::size_t dim() const { return losses_->dim(); }
  std::size_t count() const;
  const ExampleLosses& losses() const { return *losses_; }
  double l2_reg() const { return l2_; }

  double value(std::span<const double> theta) const;
  // Throws NumericError (with the layer index) on a non-finite gradient.
  ParamVector gradient(std::span<const double> theta) const;
  // (H + damping I) v, H v by central differences of the analytic gradient:
  // (g(theta + h v/|v|) - g(theta - h v/|v|)) |v| / 2h, h = 1e-4 (1 + |theta|_inf).
  ParamVector hvp(std::span<const double> theta, std::span<const double> v,
                  double damping = 0.0) const;
  // Full Hessian by central differences, symmetrized, plus damping I.
  DenseHessian dense_hessian(std::span<const double> theta, double damping = 0.0,
                             std::size_t cap = kDefaultHessianCap) const;

  static constexpr std::size_t kDefaultHessianCap = 2500;

 private:
  std::size_t example_at(std::size_t k) const { return subset_.empty() ? k : subset_[k]; }
  double weight_at(std::size_t k) const;

  const ExampleLosses* losses_;
  double l2_;
  std::vector<double> weights_;
  std::vector<std::size_t> subset_;
};

// Gradient of the unregularized mean loss over all examples of a family.
ParamVector mean_gradient(const ExampleLosses& losses, std::span<const double> theta);

}  // namespace kdaif
