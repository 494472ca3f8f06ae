#include "kdaif/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kdaif/error.hpp"
#include "kdaif/kernels.hpp"

namespace kdaif {
namespace {

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv_doubles(std::uint64_t h, std::span<const double> v) {
  return fnv_bytes(h, v.data(), v.size() * sizeof(double));
}

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;

// Activations of one forward pass, reused across calls on the same thread.
struct Workspace {
  std::vector<std::vector<double>> act;  // act[0] = input, act[l+1] = layer l output
  std::vector<double> delta;
  std::vector<double> back;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

void run_forward(const MlpSpec& spec, const std::vector<LayerView>& layers,
                 std::span<const double> theta, std::span<const double> x, Workspace& ws) {
  const auto& k = kernels::active();
  ws.act.resize(layers.size() + 1);
  ws.act[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    auto& out = ws.act[l + 1];
    out.assign(L.out, 0.0);
    k.gemv(theta.data() + L.weight_offset, ws.act[l].data(), theta.data() + L.bias_offset,
           out.data(), L.out, L.in);
    if (l + 1 < layers.size()) {
      for (auto& v : out) v = spec.activation == Activation::tanh ? std::tanh(v) : std::max(0.0, v);
    }
  }
}

double objective_value(const OutputObjective& obj, const SoftLabel& o) {
  double s = 0.0;
  for (std::size_t c = 0; c < o.p.size(); ++c) {
    if (obj.target[c] != 0.0) s -= obj.target[c] * clipped_log(o.p[c]);
  }
  if (!obj.linear_cost.empty()) {
    for (std::size_t c = 0; c < o.p.size(); ++c) s += obj.linear_cost[c] * o.p[c];
  }
  return s;
}

std::vector<std::size_t> resolve(std::span<const std::size_t> indices, std::size_t n) {
  if (!indices.empty()) return {indices.begin(), indices.end()};
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  return all;
}

}  // namespace

MlpLosses::MlpLosses(MlpSpec spec, std::vector<std::vector<double>> inputs,
                     std::vector<OutputObjective> objectives)
    : spec_(std::move(spec)), inputs_(std::move(inputs)), objectives_(std::move(objectives)) {
  spec_.validate();
  if (inputs_.size() != objectives_.size()) throw InputError("inputs and objectives differ in count");
  const std::size_t k = spec_.num_classes();
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    if (inputs_[i].size() != spec_.input_dim()) throw InputError("input dimension mismatch");
    if (objectives_[i].target.size() != k) throw InputError("target size differs from class count");
    if (!objectives_[i].linear_cost.empty() && objectives_[i].linear_cost.size() != k) {
      throw InputError("linear cost size differs from class count");
    }
  }
}

double MlpLosses::loss(std::size_t i, std::span<const double> theta) const {
  auto& ws = workspace();
  const auto layers = spec_.layers();
  run_forward(spec_, layers, theta, inputs_[i], ws);
  return objective_value(objectives_[i], softmax(ws.act.back()));
}

void MlpLosses::accumulate_gradient(std::size_t i, std::span<const double> theta, double scale,
                                    std::span<double> out) const {
  auto& ws = workspace();
  const auto layers = spec_.layers();
  const auto& k = kernels::active();
  run_forward(spec_, layers, theta, inputs_[i], ws);
  const SoftLabel o = softmax(ws.act.back());
  const auto& obj = objectives_[i];
  const std::size_t classes = o.p.size();

  // dl/dz for the output logits; clipped log terms contribute nothing.
  double active_mass = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (o.p[c] > kProbFloor) active_mass += obj.target[c];
  }
  double cost_mean = 0.0;
  if (!obj.linear_cost.empty()) {
    for (std::size_t c = 0; c < classes; ++c) cost_mean += obj.linear_cost[c] * o.p[c];
  }
  ws.delta.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    double d = active_mass * o.p[c] - (o.p[c] > kProbFloor ? obj.target[c] : 0.0);
    if (!obj.linear_cost.empty()) d += o.p[c] * (obj.linear_cost[c] - cost_mean);
    ws.delta[c] = scale * d;
  }

  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& L = layers[l];
    k.ger_acc(ws.delta.data(), ws.act[l].data(), out.data() + L.weight_offset, L.out, L.in);
    k.axpy(1.0, ws.delta.data(), out.data() + L.bias_offset, L.out);
    if (l == 0) break;
    ws.back.assign(L.in, 0.0);
    k.gemv_t_acc(theta.data() + L.weight_offset, ws.delta.data(), ws.back.data(), L.out, L.in);
    const auto& a = ws.act[l];
    for (std::size_t j = 0; j < L.in; ++j) {
      ws.back[j] *= spec_.activation == Activation::tanh ? 1.0 - a[j] * a[j] : (a[j] > 0.0 ? 1.0 : 0.0);
    }
    ws.delta.swap(ws.back);
  }
}

std::uint64_t MlpLosses::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  const auto d = spec_.describe();
  h = fnv_bytes(h, d.data(), d.size());
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    h = fnv_doubles(h, inputs_[i]);
    h = fnv_doubles(h, objectives_[i].target);
    h = fnv_doubles(h, objectives_[i].linear_cost);
  }
  return h;
}

void MlpLosses::append(const MlpLosses& other) {
  if (!(other.spec_ == spec_)) throw InputError("cannot append losses over a different spec");
  inputs_.insert(inputs_.end(), other.inputs_.begin(), other.inputs_.end());
  objectives_.insert(objectives_.end(), other.objectives_.begin(), other.objectives_.end());
}

QuadraticLosses::QuadraticLosses(std::vector<std::vector<double>> centers)
    : centers_(std::move(centers)), dim_(centers_.empty() ? 0 : centers_.front().size()) {
  if (centers_.empty() || dim_ == 0) throw InputError("quadratic losses need centers");
  for (const auto& c : centers_) {
    if (c.size() != dim_) throw InputError("quadratic centers differ in dimension");
  }
}

double QuadraticLosses::loss(std::size_t i, std::span<const double> theta) const {
  double s = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    const double d = theta[j] - centers_[i][j];
    s += d * d;
  }
  return 0.5 * s;
}

void QuadraticLosses::accumulate_gradient(std::size_t i, std::span<const double> theta,
                                          double scale, std::span<double> out) const {
  for (std::size_t j = 0; j < dim_; ++j) out[j] += scale * (theta[j] - centers_[i][j]);
}

std::uint64_t QuadraticLosses::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& c : centers_) h = fnv_doubles(h, c);
  return h;
}

MlpLosses student_losses(const MlpSpec& student, const Model* teacher,
                         std::span<const LabeledExample> examples, double alpha,
                         std::span<const std::size_t> indices) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
  if (!teacher && alpha != 1.0) throw InputError("a teacher is required when alpha < 1");
  if (teacher && teacher->spec.num_classes() != student.num_classes()) {
    throw InputError("teacher and student class counts differ");
  }
  const std::size_t k = student.num_classes();
  const auto idx = resolve(indices, examples.size());
  std::vector<std::vector<double>> xs;
  std::vector<OutputObjective> objs;
  xs.reserve(idx.size());
  objs.reserve(idx.size());
  for (auto i : idx) {
    const auto& z = examples[i];
    if (z.y >= k) throw InputError("label out of range");
    OutputObjective obj{std::vector<double>(k, 0.0), {}};
    if (alpha != 1.0) {
      const SoftLabel q = forward(*teacher, z.x);
      for (std::size_t c = 0; c < k; ++c) obj.target[c] = (1.0 - alpha) * q.p[c];
    }
    obj.target[z.y] += alpha;
    xs.push_back(z.x);
    objs.push_back(std::move(obj));
  }
  return MlpLosses(student, std::move(xs), std::move(objs));
}

MlpLosses teacher_losses(const MlpSpec& teacher, const Model& student,
                         std::span<const LabeledExample> examples, double alpha,
                         std::span<const std::size_t> indices) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
  if (teacher.num_classes() != student.spec.num_classes()) {
    throw InputError("teacher and student class counts differ");
  }
  const std::size_t k = teacher.num_classes();
  const auto idx = resolve(indices, examples.size());
  std::vector<std::vector<double>> xs;
  std::vector<OutputObjective> objs;
  xs.reserve(idx.size());
  objs.reserve(idx.size());
  for (auto i : idx) {
    const auto& z = examples[i];
    if (z.y >= k) throw InputError("label out of range");
    OutputObjective obj{std::vector<double>(k, 0.0), {}};
    obj.target[z.y] = alpha;
    if (alpha != 1.0) {
      const SoftLabel s = forward(student, z.x);
      obj.linear_cost.resize(k);
      for (std::size_t c = 0; c < k; ++c) obj.linear_cost[c] = -(1.0 - alpha) * clipped_log(s.p[c]);
    }
    xs.push_back(z.x);
    objs.push_back(std::move(obj));
  }
  return MlpLosses(teacher, std::move(xs), std::move(objs));
}

MlpLosses supervised_losses(const MlpSpec& spec, std::span<const LabeledExample> examples,
                            std::span<const std::size_t> indices) {
  return student_losses(spec, nullptr, examples, 1.0, indices);
}

MlpLosses soft_target_losses(const MlpSpec& spec, std::span<const std::vector<double>> inputs,
                             std::span<const SoftLabel> targets, double scale) {
  if (inputs.size() != targets.size()) throw InputError("inputs and soft targets differ in count");
  std::vector<std::vector<double>> xs(inputs.begin(), inputs.end());
  std::vector<OutputObjective> objs;
  objs.reserve(targets.size());
  for (const auto& t : targets) {
    OutputObjective obj{t.p, {}};
    for (auto& v : obj.target) v *= scale;
    objs.push_back(std::move(obj));
  }
  return MlpLosses(spec, std::move(xs), std::move(objs));
}

EmpiricalRisk::EmpiricalRisk(const ExampleLosses& losses, double l2_reg,
                             std::vector<double> weights, std::vector<std::size_t> subset)
    : losses_(&losses), l2_(l2_reg), weights_(std::move(weights)), subset_(std::move(subset)) {
  if (!(l2_ >= 0.0)) throw InputError("l2_reg must be nonnegative");
  if (!weights_.empty() && weights_.size() != losses.size()) {
    throw InputError("weights must align 1:1 with examples");
  }
  for (auto i : subset_) {
    if (i >= losses.size()) throw InputError("subset index out of range");
  }
  if (count() == 0) throw InputError("empirical risk over an empty batch");
}

std::size_t EmpiricalRisk::count() const {
  return subset_.empty() ? losses_->size() : subset_.size();
}

double EmpiricalRisk::weight_at(std::size_t k) const {
  return weights_.empty() ? 1.0 : weights_[example_at(k)];
}

double EmpiricalRisk::value(std::span<const double> theta) const {
  const double inv_n = 1.0 / static_cast<double>(count());
  double s = 0.0;
  for (std::size_t k = 0; k < count(); ++k) {
    s += (weight_at(k) * inv_n) * losses_->loss(example_at(k), theta);
  }
  if (l2_ > 0.0) s += 0.5 * l2_ * kernels::dot(theta, theta);
  return s;
}

ParamVector EmpiricalRisk::gradient(std::span<const double> theta) const {
  if (theta.size() != dim()) throw InputError("parameter dimension mismatch");
  ParamVector g(dim());
  const double inv_n = 1.0 / static_cast<double>(count());
  for (std::size_t k = 0; k < count(); ++k) {
    const double scale = weight_at(k) * inv_n;
    if (scale != 0.0) losses_->accumulate_gradient(example_at(k), theta, scale, g.span());
  }
  if (l2_ > 0.0) kernels::axpy(l2_, theta, g.span());
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (!std::isfinite(g[j])) {
      const int layer = losses_->layer_of(j);
      throw NumericError("non-finite gradient at coordinate " + std::to_string(j) +
                             (layer >= 0 ? " (layer " + std::to_string(layer) + ")" : ""),
                         layer);
    }
  }
  return g;
}

ParamVector EmpiricalRisk::hvp(std::span<const double> theta, std::span<const double> v,
                               double damping) const {
  if (v.size() != theta.size() || theta.size() != dim()) throw InputError("hvp dimension mismatch");
  const double vnorm = std::sqrt(kernels::dot(v, v));
  ParamVector out(dim());
  if (vnorm == 0.0) return out;
  double theta_inf = 0.0;
  for (double t : theta) theta_inf = std::max(theta_inf, std::abs(t));
  const double h = 1e-4 * (1.0 + theta_inf);
  std::vector<double> plus(theta.begin(), theta.end());
  std::vector<double> minus(theta.begin(), theta.end());
  for (std::size_t j = 0; j < dim(); ++j) {
    plus[j] += h * v[j] / vnorm;
    minus[j] -= h * v[j] / vnorm;
  }
  const ParamVector gp = gradient(plus);
  const ParamVector gm = gradient(minus);
  const double f = vnorm / (2.0 * h);
  for (std::size_t j = 0; j < dim(); ++j) {
    out[j] = (gp[j] - gm[j]) * f + damping * v[j];
    if (!std::isfinite(out[j])) throw NumericError("non-finite Hessian-vector product");
  }
  return out;
}

DenseHessian EmpiricalRisk::dense_hessian(std::span<const double> theta, double damping,
                                          std::size_t cap) const {
  const std::size_t p = dim();
  if (p > cap) {
    throw CapacityError("dense Hessian of dimension " + std::to_string(p) + " exceeds cap " +
                        std::to_string(cap));
  }
  double theta_inf = 0.0;
  for (double t : theta) theta_inf = std::max(theta_inf, std::abs(t));
  const double h = 1e-4 * (1.0 + theta_inf);
  Eigen::MatrixXd a(p, p);
  std::vector<double> probe(theta.begin(), theta.end());
  for (std::size_t j = 0; j < p; ++j) {
    probe[j] = theta[j] + h;
    const ParamVector gp = gradient(probe);
    probe[j] = theta[j] - h;
    const ParamVector gm = gradient(probe);
    probe[j] = theta[j];
    for (std::size_t i = 0; i < p; ++i) a(i, j) = (gp[i] - gm[i]) / (2.0 * h);
  }
  DenseHessian out;
  out.asymmetry = p ? (a - a.transpose()).cwiseAbs().maxCoeff() : 0.0;
  out.matrix = 0.5 * (a + a.transpose());
  out.matrix.diagonal().array() += damping;
  if (!out.matrix.allFinite()) throw NumericError("non-finite Hessian entry");
  return out;
}

ParamVector mean_gradient(const ExampleLosses& losses, std::span<const double> theta) {
  return EmpiricalRisk(losses).gradient(theta);
}

}  // namespace kdaif
