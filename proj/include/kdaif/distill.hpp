#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kdaif/data.hpp"
#include "kdaif/influence.hpp"
#include "kdaif/model.hpp"

namespace kdaif {

// Where the influence weights enter the joint teacher/student updates.
enum class Mechanism {
  kd_baseline,       // online distillation, uniform weights
  m1_student_only,   // teacher frozen after warm-up, weighted student
  m2_teacher_only,   // weighted teacher, unweighted student
  m3_both,           // both weighted
  m4_both_history,   // both weighted, normalized scores smoothed across iterations
};

std::string mechanism_name(Mechanism m);
Mechanism parse_mechanism(const std::string& name);

struct MechanismSpec {
  Mechanism id = Mechanism::m3_both;
  // M4: phi_norm <- beta * previous + (1 - beta) * current.
  double history_decay = 0.5;

  void validate() const;
  bool uses_influence() const { return id != Mechanism::kd_baseline; }
  bool weights_student() const;
  bool weights_teacher() const;
  bool teacher_frozen() const { return id == Mechanism::m1_student_only; }
};

struct KdaifOptions {
  MechanismSpec mechanism;
  IhvpSolverConfig solver;  // damping is taken from TrainConfig
  // Replace every influence score by zero, i.e. w = 1 everywhere.
  bool force_unit_weights = false;
  std::size_t jobs = 1;
};

struct EvalPoint {
  std::size_t iteration = 0;  // outer iteration, 0-based
  std::size_t step = 0;       // gradient steps taken by the main loop so far
  SplitMetrics teacher_train, teacher_val, teacher_test;
  SplitMetrics student_train, student_val, student_test;
};

struct DistillationRun {
  Model teacher;
  Model student;
  // Parameters at the end of every outer iteration.
  std::vector<ParamVector> teacher_trajectory;
  std::vector<ParamVector> student_trajectory;
  std::vector<InfluenceReport> influence;  // one per outer iteration when weights are used
  std::vector<EvalPoint> metrics;
};

// Mini-batches over [0, n): a fresh seeded permutation each epoch.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::span<const std::size_t> next();

 private:
  std::size_t n_;
  std::size_t batch_;
  std::size_t cursor_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> current_;
};

// One SGD step on (1/B) sum_b w_b l_b + (l2/2)|theta|^2; empty weights mean 1.
void sgd_step(ParamVector& params, const ExampleLosses& batch, std::span<const double> weights,
              double l2_reg, double lr);

// Student alone on cross-entropy, repeats * max_steps steps, student learning rate.
DistillationRun train_supervised(Model student, const DatasetBundle& data, const TrainConfig& config);

// Teacher warm-up, then the student follows L_S with the teacher frozen.
DistillationRun train_vanilla_kd(Model teacher, Model student, const DatasetBundle& data,
                                 const TrainConfig& config);

// Teacher warm-up, then alternating steps: teacher on L_T, student on L_S
// against the freshly updated teacher.
DistillationRun train_online_kd(Model teacher, Model student, const DatasetBundle& data,
                                const TrainConfig& config);

// Online distillation with influence weights refreshed once per outer iteration.
DistillationRun train_kdaif(Model teacher, Model student, const DatasetBundle& data,
                            const TrainConfig& config, const KdaifOptions& options);

struct SemiSupervisedPools {
  std::vector<LabeledExample> labeled;
  std::vector<std::vector<double>> unlabeled;
  std::vector<SoftLabel> pseudo_labels;  // filled by the pipeline
};

// Stratified: the first `labeled_count` training points (balanced over classes)
// keep their labels, the rest lose them.
SemiSupervisedPools make_pools(const DatasetBundle& data, std::size_t labeled_count,
                               std::uint64_t seed);

std::vector<SoftLabel> pseudo_label(const Model& teacher,
                                    std::span<const std::vector<double>> unlabeled);

// Per outer iteration: teacher on w_l-weighted labeled CE; pseudo-labels;
// student on w_l-weighted labeled CE plus alpha * w_u-weighted distillation on
// the unlabeled pool; weights recomputed at the student (labeled and unlabeled
// scores normalized separately). Evaluation uses data.val / data.test.
DistillationRun train_semi_supervised(Model teacher, Model student, SemiSupervisedPools pools,
                                      const DatasetBundle& data, const TrainConfig& config,
                                      const KdaifOptions& options);

}  // namespace kdaif
