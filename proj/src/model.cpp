#include "kdaif/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "kdaif/error.hpp"
#include "kdaif/kernels.hpp"

namespace kdaif {

std::string activation_name(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw InputError("unknown activation '" + name + "'");
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw InputError("MlpSpec needs at least input and output sizes");
  for (auto s : layer_sizes) {
    if (s == 0) throw InputError("MlpSpec layer sizes must be positive");
  }
  if (layer_sizes.back() < 2) throw InputError("MlpSpec needs at least 2 classes");
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  }
  return n;
}

std::vector<LayerView> MlpSpec::layers() const {
  std::vector<LayerView> out;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    LayerView v{layer_sizes[l], layer_sizes[l + 1], offset, 0};
    v.bias_offset = offset + v.in * v.out;
    offset = v.bias_offset + v.out;
    out.push_back(v);
  }
  return out;
}

int MlpSpec::layer_of(std::size_t coord) const {
  const auto ls = layers();
  for (std::size_t l = 0; l < ls.size(); ++l) {
    if (coord < ls[l].bias_offset + ls[l].out) return static_cast<int>(l);
  }
  return -1;
}

std::string MlpSpec::describe() const {
  std::ostringstream os;
  os << "mlp:";
  for (std::size_t i = 0; i < layer_sizes.size(); ++i) {
    if (i) os << '-';
    os << layer_sizes[i];
  }
  os << ':' << activation_name(activation);
  return os.str();
}

std::uint64_t MlpSpec::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : describe()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double ParamVector::norm() const {
  return std::sqrt(kernels::dot(values_, values_));
}

double ParamVector::norm_inf() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

std::size_t SoftLabel::argmax() const {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

bool SoftLabel::is_valid(double tol) const {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
  if (!(lr_teacher > 0.0) || !(lr_student > 0.0)) throw InputError("learning rates must be > 0");
  if (max_steps == 0) throw InputError("max_steps must be positive");
  if (batch_size == 0) throw InputError("batch_size must be positive");
  if (!(damping >= 0.0)) throw InputError("damping must be nonnegative");
  if (!(l2_reg >= 0.0)) throw InputError("l2_reg must be nonnegative");
  if (repeats == 0) throw InputError("repeats must be at least 1");
}

std::size_t TrainConfig::effective_warmup() const {
  return warmup_steps < 0 ? max_steps / 2 : static_cast<std::size_t>(warmup_steps);
}

double clipped_log(double p) { return std::log(std::clamp(p, kProbFloor, 1.0)); }

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector params(spec.param_count());
  std::mt19937_64 rng(seed);
  for (const auto& layer : spec.layers()) {
    const double s = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    std::uniform_real_distribution<double> dist(-s, s);
    for (std::size_t k = 0; k < layer.in * layer.out; ++k) params[layer.weight_offset + k] = dist(rng);
  }
  return params;
}

Model make_model(const MlpSpec& spec, std::uint64_t seed) { return Model{spec, init_params(spec, seed)}; }

std::vector<double> logits(const MlpSpec& spec, const ParamVector& params,
                           std::span<const double> x) {
  if (x.size() != spec.input_dim()) {
    throw InputError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(spec.input_dim()));
  }
  if (params.size() != spec.param_count()) throw InputError("parameter vector does not match spec");
  const auto& k = kernels::active();
  const auto layers = spec.layers();
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> z;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    z.assign(L.out, 0.0);
    k.gemv(params.data() + L.weight_offset, a.data(), params.data() + L.bias_offset, z.data(), L.out,
           L.in);
    if (l + 1 < layers.size()) {
      for (auto& v : z) v = spec.activation == Activation::tanh ? std::tanh(v) : std::max(0.0, v);
    }
    a.swap(z);
  }
  return a;
}

SoftLabel softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  SoftLabel out{std::vector<double>(z.size())};
  double s = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    out.p[c] = std::exp(z[c] - m);
    s += out.p[c];
  }
  for (auto& v : out.p) v /= s;
  return out;
}

SoftLabel forward(const MlpSpec& spec, const ParamVector& params, std::span<const double> x) {
  return softmax(logits(spec, params, x));
}

double loss_ce(const SoftLabel& q, const SoftLabel& p) {
  if (q.p.size() != p.p.size()) throw InputError("cross-entropy over mismatched class counts");
  double s = 0.0;
  for (std::size_t c = 0; c < p.p.size(); ++c) {
    if (q.p[c] != 0.0) s -= q.p[c] * clipped_log(p.p[c]);
  }
  return s;
}

double loss_ce(std::size_t label, const SoftLabel& p) {
  if (label >= p.p.size()) throw InputError("label out of range");
  return -clipped_log(p.p[label]);
}

double loss_ce_mean(std::span<const std::size_t> labels, std::span<const SoftLabel> ps) {
  if (labels.size() != ps.size() || labels.empty()) throw InputError("batch size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) s += loss_ce(labels[i], ps[i]);
  return s / static_cast<double>(labels.size());
}

double loss_ce_mean(std::span<const SoftLabel> qs, std::span<const SoftLabel> ps) {
  if (qs.size() != ps.size() || qs.empty()) throw InputError("batch size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < qs.size(); ++i) s += loss_ce(qs[i], ps[i]);
  return s / static_cast<double>(qs.size());
}

double loss_kd(std::span<const double> x, const Model& teacher, const Model& student) {
  if (teacher.spec.num_classes() != student.spec.num_classes()) {
    throw InputError("teacher and student class counts differ");
  }
  return loss_ce(forward(teacher, x), forward(student, x));
}

double loss_student(const LabeledExample& z, const Model& student, const Model& teacher,
                    double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
  const SoftLabel s = forward(student, z.x);
  if (alpha == 1.0) return loss_ce(z.y, s);
  if (teacher.spec.num_classes() != student.spec.num_classes()) {
    throw InputError("teacher and student class counts differ");
  }
  const double kd = loss_ce(forward(teacher, z.x), s);
  if (alpha == 0.0) return kd;
  return (1.0 - alpha) * kd + alpha * loss_ce(z.y, s);
}

double loss_teacher(const LabeledExample& z, const Model& teacher, const Model& student,
                    double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
  const SoftLabel t = forward(teacher, z.x);
  if (alpha == 1.0) return loss_ce(z.y, t);
  if (teacher.spec.num_classes() != student.spec.num_classes()) {
    throw InputError("teacher and student class counts differ");
  }
  const double kd = loss_ce(t, forward(student, z.x));
  if (alpha == 0.0) return kd;
  return (1.0 - alpha) * kd + alpha * loss_ce(z.y, t);
}

}  // namespace kdaif
