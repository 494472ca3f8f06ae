#include "kdaif/distill.hpp"

#include <algorithm>
#include <cmath>

#include "kdaif/error.hpp"
#include "kdaif/kernels.hpp"

namespace kdaif {

std::string mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::kd_baseline:
      return "baseline";
    case Mechanism::m1_student_only:
      return "m1";
    case Mechanism::m2_teacher_only:
      return "m2";
    case Mechanism::m3_both:
      return "m3";
    case Mechanism::m4_both_history:
      return "m4";
  }
  return "unknown";
}

Mechanism parse_mechanism(const std::string& name) {
  if (name == "baseline") return Mechanism::kd_baseline;
  if (name == "m1") return Mechanism::m1_student_only;
  if (name == "m2") return Mechanism::m2_teacher_only;
  if (name == "m3") return Mechanism::m3_both;
  if (name == "m4") return Mechanism::m4_both_history;
  throw InputError("unknown mechanism '" + name + "'");
}

void MechanismSpec::validate() const {
  if (!(history_decay > 0.0 && history_decay <= 1.0)) {
    throw InputError("history_decay must lie in (0, 1]");
  }
}

bool MechanismSpec::weights_student() const {
  return id == Mechanism::m1_student_only || id == Mechanism::m3_both ||
         id == Mechanism::m4_both_history;
}

bool MechanismSpec::weights_teacher() const {
  return id == Mechanism::m2_teacher_only || id == Mechanism::m3_both ||
         id == Mechanism::m4_both_history;
}

MinibatchSampler::MinibatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_(std::min(batch_size, n)), cursor_(n), rng_(seed), order_(n) {
  if (n == 0 || batch_size == 0) throw InputError("sampler needs data and a positive batch size");
  for (std::size_t i = 0; i < n; ++i) order_[i] = i;
}

std::span<const std::size_t> MinibatchSampler::next() {
  current_.clear();
  while (current_.size() < batch_) {
    if (cursor_ == n_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    current_.push_back(order_[cursor_++]);
  }
  return current_;
}

void sgd_step(ParamVector& params, const ExampleLosses& batch, std::span<const double> weights,
              double l2_reg, double lr) {
  const EmpiricalRisk risk(batch, l2_reg, std::vector<double>(weights.begin(), weights.end()));
  const ParamVector g = risk.gradient(params.span());
  kernels::axpy(-lr, g.span(), params.span());
}

namespace {

// Independent random streams derived from the run seed.
constexpr std::uint64_t kWarmupStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kTeacherStream = 0xc2b2ae3d27d4eb4fULL;

std::vector<double> gather(std::span<const double> w, std::span<const std::size_t> idx) {
  if (w.empty()) return {};
  std::vector<double> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = w[idx[k]];
  return out;
}

void check_models(const Model& teacher, const Model& student, const DatasetBundle& data) {
  teacher.spec.validate();
  student.spec.validate();
  if (teacher.params.size() != teacher.spec.param_count() ||
      student.params.size() != student.spec.param_count()) {
    throw InputError("parameter vector does not match its spec");
  }
  if (teacher.spec.num_classes() != student.spec.num_classes() ||
      student.spec.num_classes() != data.num_classes) {
    throw InputError("class counts of teacher, student and data disagree");
  }
  if (teacher.spec.input_dim() != data.dim || student.spec.input_dim() != data.dim) {
    throw InputError("model input dimension differs from data dimension");
  }
  if (data.train.empty()) throw InputError("no training data");
}

void warm_up_teacher(Model& teacher, std::span<const LabeledExample> train, const TrainConfig& c,
                     std::size_t steps) {
  if (steps == 0) return;
  MinibatchSampler sampler(train.size(), c.batch_size, c.seed ^ kWarmupStream);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto idx = sampler.next();
    sgd_step(teacher.params, supervised_losses(teacher.spec, train, idx), {}, c.l2_reg, c.lr_teacher);
  }
}

void teacher_step(Model& teacher, const Model& student, std::span<const LabeledExample> train,
                  std::span<const std::size_t> idx, std::span<const double> weights,
                  const TrainConfig& c) {
  const MlpLosses batch = teacher_losses(teacher.spec, student, train, c.alpha, idx);
  sgd_step(teacher.params, batch, gather(weights, idx), c.l2_reg, c.lr_teacher);
}

void student_step(Model& student, const Model& teacher, std::span<const LabeledExample> train,
                  std::span<const std::size_t> idx, std::span<const double> weights,
                  const TrainConfig& c) {
  const MlpLosses batch = student_losses(student.spec, &teacher, train, c.alpha, idx);
  sgd_step(student.params, batch, gather(weights, idx), c.l2_reg, c.lr_student);
}

SplitMetrics metrics_or_zero(const Model& m, std::span<const LabeledExample> split) {
  return split.empty() ? SplitMetrics{} : metrics(m, split);
}

void check_divergence(const SplitMetrics& m, const char* who, std::size_t iteration,
                      const TrainConfig& c) {
  if (!std::isfinite(m.mean_loss) || m.mean_loss > c.divergence_threshold) {
    throw DivergenceError(std::string(who) + " training loss " + std::to_string(m.mean_loss) +
                          " exceeds " + std::to_string(c.divergence_threshold) +
                          " at outer iteration " + std::to_string(iteration));
  }
}

void record(DistillationRun& run, const Model& teacher, const Model& student,
            const DatasetBundle& data, std::span<const LabeledExample> teacher_train,
            std::size_t iteration, std::size_t step, const TrainConfig& c, bool has_teacher = true) {
  EvalPoint e;
  e.iteration = iteration;
  e.step = step;
  if (has_teacher) {
    e.teacher_train = metrics_or_zero(teacher, teacher_train);
    e.teacher_val = metrics_or_zero(teacher, data.val);
    e.teacher_test = metrics_or_zero(teacher, data.test);
    check_divergence(e.teacher_train, "teacher", iteration, c);
  }
  e.student_train = metrics_or_zero(student, data.train);
  e.student_val = metrics_or_zero(student, data.val);
  e.student_test = metrics_or_zero(student, data.test);
  check_divergence(e.student_train, "student", iteration, c);
  run.metrics.push_back(e);
  if (has_teacher) run.teacher_trajectory.push_back(teacher.params);
  run.student_trajectory.push_back(student.params);
}

void check_disjoint(const DatasetBundle& data) {
  for (const auto& v : data.val) {
    for (const auto& t : data.train) {
      if (v.x == t.x) throw InputError("validation set overlaps the training set");
    }
  }
}

InfluenceReport unit_report(std::size_t n) {
  InfluenceReport r;
  r.phi.assign(n, 0.0);
  assign_weights(r);
  return r;
}

SolverError with_iteration(const SolverError& e, std::size_t iteration) {
  return SolverError("outer iteration " + std::to_string(iteration) + ": " + e.what(), e.residual(),
                     e.iterations());
}

enum class JointMode { vanilla, online, kdaif };

DistillationRun run_joint(Model teacher, Model student, const DatasetBundle& data,
                          const TrainConfig& config, JointMode mode, const KdaifOptions* options) {
  config.validate();
  check_models(teacher, student, data);
  const bool influence = mode == JointMode::kdaif && options->mechanism.uses_influence();
  if (mode == JointMode::kdaif) {
    options->mechanism.validate();
    if (influence) {
      if (data.val.empty()) throw InputError("KD-AIF needs a validation set");
      check_disjoint(data);
    }
  }
  const bool teacher_updates =
      mode == JointMode::online ||
      (mode == JointMode::kdaif && !options->mechanism.teacher_frozen());
  const bool weight_teacher = influence && options->mechanism.weights_teacher();
  const bool weight_student = influence && options->mechanism.weights_student();

  warm_up_teacher(teacher, data.train, config, config.effective_warmup());

  DistillationRun run;
  MinibatchSampler sampler(data.train.size(), config.batch_size, config.seed);
  std::vector<double> history;
  std::size_t step = 0;
  for (std::size_t t = 0; t < config.repeats; ++t) {
    std::vector<double> weights;
    if (influence) {
      InfluenceReport report;
      if (options->force_unit_weights) {
        report = unit_report(data.train.size());
      } else {
        IhvpSolverConfig solver = options->solver;
        solver.damping = config.damping;
        const MlpLosses train = student_losses(student.spec, &teacher, data.train, config.alpha);
        const MlpLosses val = student_losses(student.spec, &teacher, data.val, config.alpha);
        try {
          report = influence_scores(train, val, student.params.span(), config.l2_reg, solver,
                                    options->jobs);
        } catch (const SolverError& e) {
          throw with_iteration(e, t);
        }
        report.phi_norm = normalize_scores(report.phi);
        if (options->mechanism.id == Mechanism::m4_both_history && !history.empty()) {
          const double beta = options->mechanism.history_decay;
          for (std::size_t i = 0; i < history.size(); ++i) {
            report.phi_norm[i] = beta * history[i] + (1.0 - beta) * report.phi_norm[i];
          }
        }
        history = report.phi_norm;
        fill_weights(report);
      }
      weights = report.weights;
      run.influence.push_back(std::move(report));
    }
    const std::span<const double> w_teacher = weight_teacher ? std::span<const double>(weights) : std::span<const double>();
    const std::span<const double> w_student = weight_student ? std::span<const double>(weights) : std::span<const double>();

    for (std::size_t m = 0; m < config.max_steps; ++m, ++step) {
      const auto idx = sampler.next();
      if (teacher_updates) teacher_step(teacher, student, data.train, idx, w_teacher, config);
      student_step(student, teacher, data.train, idx, w_student, config);
    }
    record(run, teacher, student, data, data.train, t, step, config);
  }
  run.teacher = std::move(teacher);
  run.student = std::move(student);
  return run;
}

MlpLosses semi_student_losses(const MlpSpec& spec, const SemiSupervisedPools& pools, double alpha,
                              std::span<const std::size_t> idx) {
  const std::size_t k = spec.num_classes();
  const std::size_t n_l = pools.labeled.size();
  std::vector<std::vector<double>> xs;
  std::vector<OutputObjective> objs;
  xs.reserve(idx.size());
  objs.reserve(idx.size());
  for (auto i : idx) {
    OutputObjective obj{std::vector<double>(k, 0.0), {}};
    if (i < n_l) {
      xs.push_back(pools.labeled[i].x);
      obj.target[pools.labeled[i].y] = 1.0;
    } else {
      xs.push_back(pools.unlabeled[i - n_l]);
      const auto& q = pools.pseudo_labels[i - n_l].p;
      for (std::size_t c = 0; c < k; ++c) obj.target[c] = alpha * q[c];
    }
    objs.push_back(std::move(obj));
  }
  return MlpLosses(spec, std::move(xs), std::move(objs));
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

DistillationRun train_supervised(Model student, const DatasetBundle& data, const TrainConfig& config) {
  config.validate();
  if (student.spec.num_classes() != data.num_classes || student.spec.input_dim() != data.dim) {
    throw InputError("model does not match the data");
  }
  DistillationRun run;
  MinibatchSampler sampler(data.train.size(), config.batch_size, config.seed);
  std::size_t step = 0;
  for (std::size_t t = 0; t < config.repeats; ++t) {
    for (std::size_t m = 0; m < config.max_steps; ++m, ++step) {
      const auto idx = sampler.next();
      sgd_step(student.params, supervised_losses(student.spec, data.train, idx), {},
               config.l2_reg, config.lr_student);
    }
    record(run, student, student, data, data.train, t, step, config, false);
  }
  run.student = std::move(student);
  return run;
}

DistillationRun train_vanilla_kd(Model teacher, Model student, const DatasetBundle& data,
                                 const TrainConfig& config) {
  return run_joint(std::move(teacher), std::move(student), data, config, JointMode::vanilla, nullptr);
}

DistillationRun train_online_kd(Model teacher, Model student, const DatasetBundle& data,
                                const TrainConfig& config) {
  return run_joint(std::move(teacher), std::move(student), data, config, JointMode::online, nullptr);
}

DistillationRun train_kdaif(Model teacher, Model student, const DatasetBundle& data,
                            const TrainConfig& config, const KdaifOptions& options) {
  return run_joint(std::move(teacher), std::move(student), data, config, JointMode::kdaif, &options);
}

SemiSupervisedPools make_pools(const DatasetBundle& data, std::size_t labeled_count,
                               std::uint64_t seed) {
  if (labeled_count == 0) throw InputError("labeled pool must be nonempty");
  if (labeled_count > data.train.size()) throw InputError("labeled count exceeds N_train");
  const std::size_t k = data.num_classes;
  std::vector<std::size_t> quota(k, labeled_count / k);
  for (std::size_t c = 0; c < labeled_count % k; ++c) ++quota[c];
  auto order = iota_indices(data.train.size());
  std::mt19937_64 rng(seed ^ kTeacherStream);
  std::shuffle(order.begin(), order.end(), rng);
  SemiSupervisedPools pools;
  std::vector<bool> taken(data.train.size(), false);
  for (auto i : order) {
    const auto& z = data.train[i];
    if (quota[z.y] > 0) {
      --quota[z.y];
      taken[i] = true;
      pools.labeled.push_back(z);
    }
  }
  // Classes too small for their quota: fill from whatever remains.
  for (auto i : order) {
    if (pools.labeled.size() == labeled_count) break;
    if (!taken[i]) {
      taken[i] = true;
      pools.labeled.push_back(data.train[i]);
    }
  }
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    if (!taken[i]) pools.unlabeled.push_back(data.train[i].x);
  }
  return pools;
}

std::vector<SoftLabel> pseudo_label(const Model& teacher,
                                    std::span<const std::vector<double>> unlabeled) {
  std::vector<SoftLabel> out;
  out.reserve(unlabeled.size());
  for (const auto& x : unlabeled) out.push_back(forward(teacher, x));
  return out;
}

DistillationRun train_semi_supervised(Model teacher, Model student, SemiSupervisedPools pools,
                                      const DatasetBundle& data, const TrainConfig& config,
                                      const KdaifOptions& options) {
  config.validate();
  check_models(teacher, student, data);
  if (pools.labeled.empty()) throw InputError("labeled pool must be nonempty");
  const bool weighted = !options.force_unit_weights;
  if (weighted && data.val.empty()) throw InputError("semi-supervised KD-AIF needs a validation set");
  const std::size_t n_l = pools.labeled.size();
  const std::size_t n_u = pools.unlabeled.size();
  const std::size_t n = n_l + n_u;

  std::vector<double> weights(n, 1.0);
  DistillationRun run;
  MinibatchSampler teacher_sampler(n_l, config.batch_size, config.seed ^ kTeacherStream);
  MinibatchSampler student_sampler(n, config.batch_size, config.seed);
  std::size_t step = 0;
  for (std::size_t t = 0; t < config.repeats; ++t) {
    // Step 1: teacher on the weighted labeled pool (warm-up folded into the first pass).
    const std::span<const double> w_l(weights.data(), n_l);
    const std::size_t teacher_steps = config.max_steps + (t == 0 ? config.effective_warmup() : 0);
    for (std::size_t m = 0; m < teacher_steps; ++m) {
      const auto idx = teacher_sampler.next();
      sgd_step(teacher.params, supervised_losses(teacher.spec, pools.labeled, idx),
               weighted ? gather(w_l, idx) : std::vector<double>{}, config.l2_reg, config.lr_teacher);
    }
    // Step 2: soft pseudo-labels.
    pools.pseudo_labels = pseudo_label(teacher, pools.unlabeled);
    // Step 3: student on labeled CE plus alpha-scaled distillation on unlabeled.
    for (std::size_t m = 0; m < config.max_steps; ++m, ++step) {
      const auto idx = student_sampler.next();
      sgd_step(student.params, semi_student_losses(student.spec, pools, config.alpha, idx),
               weighted ? gather(weights, idx) : std::vector<double>{}, config.l2_reg,
               config.lr_student);
    }
    // Step 4: influence weights at the student.
    InfluenceReport report;
    if (weighted) {
      IhvpSolverConfig solver = options.solver;
      solver.damping = config.damping;
      const auto all = iota_indices(n);
      const MlpLosses train = semi_student_losses(student.spec, pools, config.alpha, all);
      const MlpLosses val = supervised_losses(student.spec, data.val);
      try {
        report = influence_scores(train, val, student.params.span(), config.l2_reg, solver, options.jobs);
      } catch (const SolverError& e) {
        throw with_iteration(e, t);
      }
      report.phi_norm.assign(n, 0.0);
      const auto labeled_norm = normalize_scores(std::span<const double>(report.phi.data(), n_l));
      std::copy(labeled_norm.begin(), labeled_norm.end(), report.phi_norm.begin());
      if (n_u > 0) {
        const auto unlabeled_norm = normalize_scores(std::span<const double>(report.phi.data() + n_l, n_u));
        std::copy(unlabeled_norm.begin(), unlabeled_norm.end(), report.phi_norm.begin() + static_cast<std::ptrdiff_t>(n_l));
      }
      fill_weights(report);
      weights = report.weights;
    } else {
      report = unit_report(n);
    }
    run.influence.push_back(std::move(report));
    record(run, teacher, student, data, pools.labeled, t, step, config);
  }
  run.teacher = std::move(teacher);
  run.student = std::move(student);
  return run;
}

}  // namespace kdaif
