#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kdaif {

enum class Activation { tanh, relu };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

// Geometry of one dense layer inside a flat parameter vector. Weights are
// stored row-major (out x in) followed by the bias.
struct LayerView {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

// Dense classifier: layer_sizes = {input, hidden..., classes}, softmax output.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::tanh;

  void validate() const;
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t param_count() const;
  std::vector<LayerView> layers() const;
  // Index of the layer owning a flat parameter coordinate.
  int layer_of(std::size_t coord) const;

  // Canonical text form, e.g. "mlp:2-8-3:tanh"; the hash is FNV-1a over it.
  std::string describe() const;
  std::uint64_t hash() const;

  bool operator==(const MlpSpec&) const = default;
};

// Flattened model parameters.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  const std::vector<double>& values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  bool all_finite() const;
  double norm() const;
  double norm_inf() const;

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
};

struct LabeledExample {
  std::vector<double> x;
  std::size_t y = 0;

  bool operator==(const LabeledExample&) const = default;
};

// Probability vector over the classes.
struct SoftLabel {
  std::vector<double> p;

  std::size_t argmax() const;
  bool is_valid(double tol = 1e-9) const;
};

struct Model {
  MlpSpec spec;
  ParamVector params;
};

// Hyperparameters shared by every training loop.
struct TrainConfig {
  double alpha = 0.6;
  double lr_teacher = 0.1;
  double lr_student = 0.1;
  std::size_t max_steps = 200;      // gradient steps per outer iteration
  std::size_t batch_size = 32;
  double damping = 1e-3;            // added to the Hessian before inversion
  std::uint64_t seed = 0;
  double l2_reg = 1e-3;
  long warmup_steps = -1;           // teacher warm-up; negative means max_steps / 2
  std::size_t repeats = 5;          // outer iterations (influence refreshes)
  double divergence_threshold = 1e6;

  void validate() const;
  std::size_t effective_warmup() const;
};

// Log arguments are clipped to [kProbFloor, 1].
inline constexpr double kProbFloor = 1e-12;
double clipped_log(double p);

// Seeded Glorot-uniform weights, zero biases.
ParamVector init_params(const MlpSpec& spec, std::uint64_t seed);
Model make_model(const MlpSpec& spec, std::uint64_t seed);

std::vector<double> logits(const MlpSpec& spec, const ParamVector& params,
                           std::span<const double> x);
SoftLabel forward(const MlpSpec& spec, const ParamVector& params, std::span<const double> x);
inline SoftLabel forward(const Model& m, std::span<const double> x) {
  return forward(m.spec, m.params, x);
}

// Numerically stable softmax of logits.
SoftLabel softmax(std::span<const double> logits);

// -sum_c q_c log p_c
double loss_ce(const SoftLabel& q, const SoftLabel& p);
// One-hot target.
double loss_ce(std::size_t label, const SoftLabel& p);
double loss_ce_mean(std::span<const std::size_t> labels, std::span<const SoftLabel> ps);
double loss_ce_mean(std::span<const SoftLabel> qs, std::span<const SoftLabel> ps);

// Cross-entropy of the student output against the teacher output.
double loss_kd(std::span<const double> x, const Model& teacher, const Model& student);
// (1-alpha) L_kd + alpha L_ce(y, S(x))
double loss_student(const LabeledExample& z, const Model& student, const Model& teacher,
                    double alpha);
// (1-alpha) L_kd + alpha L_ce(y, T(x))
double loss_teacher(const LabeledExample& z, const Model& teacher, const Model& student,
                    double alpha);

}  // namespace kdaif
