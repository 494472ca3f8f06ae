#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kdaif/data.hpp"
#include "kdaif/distill.hpp"
#include "kdaif/error.hpp"
#include "kdaif/influence.hpp"
#include "kdaif/io.hpp"
#include "kdaif/model.hpp"
#include "kdaif/objective.hpp"
#include "kdaif/optimize.hpp"
#include "kdaif/robust_risk.hpp"
#include "kdaif/stats.hpp"

namespace kdaif::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Teacher initialization draws from its own stream so the student's init
// matches the supervised baseline under the same seed.
constexpr std::uint64_t kTeacherInitStream = 0x5851f42d4c957f2dULL;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> parse_hidden(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty() || s == "none") return out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(tok, &pos);
      if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("hidden layer sizes must be a comma list of positive integers, got '" + s + "'");
    }
  }
  return out;
}

MlpSpec make_spec(std::size_t dim, std::size_t classes, const std::string& hidden,
                  const std::string& activation) {
  MlpSpec s;
  s.layer_sizes.push_back(dim);
  for (auto h : parse_hidden(hidden)) s.layer_sizes.push_back(h);
  s.layer_sizes.push_back(classes);
  try {
    s.activation = parse_activation(activation);
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  s.validate();
  return s;
}

IhvpMethod pick_solver(const std::string& name, std::size_t dim) {
  if (name == "auto") {
    return dim <= EmpiricalRisk::kDefaultHessianCap ? IhvpMethod::dense_solve : IhvpMethod::conjugate_gradient;
  }
  return parse_ihvp_method(name);
}

void print_json_line(std::ostream& os, const json& j) { os << j.dump() << '\n'; }

int exit_code_for(const Error& e) {
  const std::string k = e.kind();
  if (k == "input") return 3;
  if (k == "numeric" || k == "divergence") return 4;
  if (k == "solver") return 5;
  if (k == "capacity") return 6;
  return 1;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string generator = "blobs";
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::size_t dim = 2;
  double separation = 5.0;
  double noise_std = 1.0;
  double noise_rate = 0.0;
  std::vector<double> shift;
  double val_frac = 0.15;
  double test_frac = 0.25;
  std::string input;
  std::uint64_t seed = 0;
  std::string out;
};

void add_gen_data(CLI::App& app, GenDataArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("gen-data", "Generate or ingest a dataset bundle");
  sub->add_option("--generator", a.generator, "blobs, moons or csv")
      ->check(CLI::IsMember({"blobs", "moons", "csv"}));
  sub->add_option("--classes", a.classes, "Number of classes (blobs)");
  sub->add_option("--per-class", a.per_class, "Points per class");
  sub->add_option("--dim", a.dim, "Feature dimension (blobs)");
  sub->add_option("--separation", a.separation, "Distance between neighbouring blob means");
  sub->add_option("--noise-std", a.noise_std, "Feature noise standard deviation");
  sub->add_option("--noise-rate", a.noise_rate, "Fraction of training labels to flip");
  sub->add_option("--shift", a.shift, "Validation feature shift (one value or one per dimension)")
      ->delimiter(',');
  sub->add_option("--val-frac", a.val_frac, "Validation fraction per class");
  sub->add_option("--test-frac", a.test_frac, "Test fraction per class");
  sub->add_option("--input", a.input, "CSV file for --generator csv");
  sub->add_option("--seed", a.seed, "Random seed");
  sub->add_option("--out", a.out, "Output directory")->required();
  action = [sub, &a] {
    const auto given = [sub](const char* name) { return sub->count(name) > 0; };
    if (a.generator == "csv") {
      if (a.input.empty()) throw UsageError("--generator csv requires --input");
      for (const char* f : {"--classes", "--per-class", "--dim", "--separation", "--noise-std"}) {
        if (given(f)) throw UsageError(std::string(f) + " cannot be combined with --generator csv");
      }
    } else if (!a.input.empty()) {
      throw UsageError("--input is only valid with --generator csv");
    }
    if (a.generator == "moons") {
      if (given("--classes") && a.classes != 2) throw UsageError("moons have exactly 2 classes");
      if (given("--dim") && a.dim != 2) throw UsageError("moons are 2-dimensional");
      if (given("--separation")) throw UsageError("--separation does not apply to moons");
    }
    if (!(a.noise_rate >= 0.0 && a.noise_rate < 1.0)) throw UsageError("--noise-rate must lie in [0, 1)");
    if (!(a.val_frac >= 0.0 && a.test_frac >= 0.0 && a.val_frac + a.test_frac < 1.0)) {
      throw UsageError("split fractions must be nonnegative and sum below 1");
    }
    const SplitFractions split{a.val_frac, a.test_frac};
    DatasetBundle b;
    if (a.generator == "blobs") {
      BlobsParams p;
      p.classes = a.classes;
      p.per_class = a.per_class;
      p.dim = a.dim;
      p.separation = a.separation;
      p.noise_std = a.noise_std;
      p.seed = a.seed;
      p.split = split;
      b = gen_blobs(p);
    } else if (a.generator == "moons") {
      b = gen_two_moons(2 * a.per_class, a.noise_std, a.seed, split);
    } else {
      auto examples = read_examples_csv(a.input);
      if (examples.empty()) throw InputError(a.input + " holds no examples");
      std::size_t k = 0;
      for (const auto& z : examples) k = std::max(k, z.y + 1);
      b = split_examples(std::move(examples), k, a.seed, split, "csv");
    }
    if (a.noise_rate > 0.0) b = inject_noise(b, NoiseSpec{a.noise_rate, a.seed});
    if (!a.shift.empty()) {
      std::vector<double> s = a.shift;
      if (s.size() == 1) s.assign(b.dim, a.shift[0]);
      if (s.size() != b.dim) throw UsageError("--shift needs one value or one per dimension");
      b = shift_validation(b, s);
    }
    b.validate();
    write_bundle(b, a.out);
    std::size_t flipped = 0;
    for (bool f : b.noise_mask) flipped += f ? 1 : 0;
    print_json_line(std::cout, json{{"out", a.out},
                                    {"n_train", b.train.size()},
                                    {"n_val", b.val.size()},
                                    {"n_test", b.test.size()},
                                    {"flipped", flipped},
                                    {"fingerprint", b.fingerprint()}});
  };
  sub->callback([] {});
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string mode;
  std::string mechanism;
  std::string solver = "auto";
  std::string data;
  std::string out;
  std::string teacher_hidden = "16";
  std::string student_hidden = "8";
  std::string activation = "tanh";
  std::size_t labeled = 40;
  bool unit_weights = false;
  double history_decay = 0.5;
  TrainConfig config;
};

void add_train(CLI::App& app, TrainArgs& a, const std::size_t& jobs, std::function<void()>& action) {
  auto* sub = app.add_subcommand("train", "Train a teacher/student pair");
  auto& c = a.config;
  sub->add_option("--mode", a.mode, "kd, online, kdaif, semi or supervised")
      ->required()
      ->check(CLI::IsMember({"kd", "online", "kdaif", "semi", "supervised"}));
  sub->add_option("--mechanism", a.mechanism, "baseline, m1, m2, m3 or m4 (kdaif, semi)")
      ->check(CLI::IsMember({"baseline", "m1", "m2", "m3", "m4"}));
  sub->add_option("--alpha", c.alpha, "Weight of the label term");
  sub->add_option("--lr-teacher", c.lr_teacher, "Teacher learning rate");
  sub->add_option("--lr-student", c.lr_student, "Student learning rate");
  sub->add_option("--steps", c.max_steps, "Gradient steps per outer iteration");
  sub->add_option("--repeats", c.repeats, "Outer iterations");
  sub->add_option("--batch", c.batch_size, "Mini-batch size");
  sub->add_option("--warmup", c.warmup_steps, "Teacher warm-up steps (default steps / 2)");
  sub->add_option("--damping", c.damping, "Hessian damping");
  sub->add_option("--l2", c.l2_reg, "L2 regularization");
  sub->add_option("--divergence-threshold", c.divergence_threshold, "Training-loss abort threshold");
  sub->add_option("--solver", a.solver, "auto, dense or cg (auto: dense up to 2500 parameters)")->check(CLI::IsMember({"auto", "dense", "cg"}));
  sub->add_option("--history-decay", a.history_decay, "M4 moving-average coefficient");
  sub->add_option("--teacher-hidden", a.teacher_hidden, "Teacher hidden sizes, comma separated");
  sub->add_option("--student-hidden", a.student_hidden, "Student hidden sizes, comma separated");
  sub->add_option("--activation", a.activation, "tanh or relu");
  sub->add_option("--labeled", a.labeled, "Labeled pool size (semi)");
  sub->add_flag("--unit-weights", a.unit_weights, "Force every influence weight to 1");
  sub->add_option("--data", a.data, "Bundle directory")->required();
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--out", a.out, "Run directory")->required();
  action = [sub, &a, &jobs] {
    const bool weighted_mode = a.mode == "kdaif" || a.mode == "semi";
    if (!a.mechanism.empty() && !weighted_mode) {
      throw UsageError("--mechanism only applies to --mode kdaif or semi");
    }
    if (a.unit_weights && !weighted_mode) throw UsageError("--unit-weights only applies to kdaif or semi");
    if (sub->count("--labeled") && a.mode != "semi") throw UsageError("--labeled only applies to --mode semi");
    if (a.mode == "semi" && !a.mechanism.empty() && a.mechanism != "m3" && a.mechanism != "baseline") {
      throw UsageError("semi mode weights both models; use --mechanism m3 or baseline");
    }
    if (!fs::is_directory(a.data)) throw UsageError("--data " + a.data + " is not a directory");
    const DatasetBundle data = read_bundle(a.data);
    a.config.validate();

    const MlpSpec tspec = make_spec(data.dim, data.num_classes, a.teacher_hidden, a.activation);
    const MlpSpec sspec = make_spec(data.dim, data.num_classes, a.student_hidden, a.activation);
    Model teacher = make_model(tspec, a.config.seed ^ kTeacherInitStream);
    Model student = make_model(sspec, a.config.seed);

    KdaifOptions opt;
    opt.mechanism.id = parse_mechanism(a.mechanism.empty() ? "m3" : a.mechanism);
    opt.mechanism.history_decay = a.history_decay;
    opt.solver.method = pick_solver(a.solver, sspec.param_count());
    opt.force_unit_weights = a.unit_weights;
    opt.jobs = jobs;

    RunInfo info;
    info.mode = a.mode;
    info.mechanism = weighted_mode ? mechanism_name(opt.mechanism.id) : "";
    info.solver = ihvp_method_name(opt.solver.method);
    info.data_dir = a.data;
    info.data_fingerprint = data.fingerprint();
    info.teacher_spec = tspec;
    info.student_spec = sspec;
    info.config = a.config;
    info.unit_weights = a.unit_weights;

    DistillationRun run;
    std::vector<bool> mask = data.noise_mask;
    if (a.mode == "supervised") {
      run = train_supervised(student, data, a.config);
    } else if (a.mode == "kd") {
      run = train_vanilla_kd(teacher, student, data, a.config);
    } else if (a.mode == "online") {
      run = train_online_kd(teacher, student, data, a.config);
    } else if (a.mode == "kdaif") {
      run = train_kdaif(teacher, student, data, a.config, opt);
    } else {
      if (opt.mechanism.id == Mechanism::kd_baseline) opt.force_unit_weights = true;
      info.unit_weights = opt.force_unit_weights;
      info.labeled = a.labeled;
      auto pools = make_pools(data, a.labeled, a.config.seed);
      run = train_semi_supervised(teacher, student, std::move(pools), data, a.config, opt);
      mask.clear();  // pool order differs from the bundle's train order
    }
    for (const auto& r : run.influence) {
      for (double w : r.weights) {
        if (!(w >= 0.0 && w <= 2.0)) throw NumericError("influence weight outside [0, 2]");
      }
    }
    write_run(a.out, info, run, mask);
    const auto& last = run.metrics.back();
    print_json_line(std::cout, json{{"out", a.out},
                                    {"student_test_acc", last.student_test.accuracy},
                                    {"teacher_test_acc", last.teacher_test.accuracy},
                                    {"influence_refreshes", run.influence.size()}});
  };
  sub->callback([] {});
}

// ---------------------------------------------------------------- fit / influence

struct ModelArgs {
  std::string data;
  std::string hidden;
  std::string activation = "tanh";
  std::string teacher_params;
  std::string teacher_hidden = "16";
  std::optional<double> alpha;
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

void add_model_options(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--data", m.data, "Bundle directory")->required();
  sub->add_option("--hidden", m.hidden, "Hidden sizes, comma separated (default: none, i.e. logistic)");
  sub->add_option("--activation", m.activation, "tanh or relu");
  sub->add_option("--teacher-params", m.teacher_params, "Teacher parameter file for the distillation term");
  sub->add_option("--teacher-hidden", m.teacher_hidden, "Teacher hidden sizes");
  sub->add_option("--alpha", m.alpha, "Weight of the label term (default 1 without a teacher, else 0.6)");
  sub->add_option("--l2", m.l2, "L2 regularization");
  sub->add_option("--seed", m.seed, "Initialization seed");
}

struct LoadedProblem {
  DatasetBundle data;
  MlpSpec spec;
  std::optional<Model> teacher;
  double alpha = 1.0;
};

LoadedProblem load_problem(const ModelArgs& m) {
  if (!fs::is_directory(m.data)) throw UsageError("--data " + m.data + " is not a directory");
  LoadedProblem p;
  p.data = read_bundle(m.data);
  p.spec = make_spec(p.data.dim, p.data.num_classes, m.hidden, m.activation);
  if (!m.teacher_params.empty()) {
    const MlpSpec ts = make_spec(p.data.dim, p.data.num_classes, m.teacher_hidden, m.activation);
    p.teacher = Model{ts, read_params(m.teacher_params, ts)};
  }
  p.alpha = m.alpha.value_or(p.teacher ? 0.6 : 1.0);
  if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) throw UsageError("--alpha must lie in [0, 1]");
  if (!p.teacher && p.alpha != 1.0) throw UsageError("--alpha below 1 needs --teacher-params");
  return p;
}

struct FitArgs {
  ModelArgs model;
  std::size_t max_iters = 100;
  std::string out;
};

void add_fit(CLI::App& app, FitArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("fit", "Fit the student objective to convergence (full-batch Newton)");
  add_model_options(sub, a.model);
  sub->add_option("--max-iters", a.max_iters, "Newton iteration limit");
  sub->add_option("--out", a.out, "Parameter file to write")->required();
  action = [&a] {
    const auto p = load_problem(a.model);
    const MlpLosses train =
        student_losses(p.spec, p.teacher ? &*p.teacher : nullptr, p.data.train, p.alpha);
    const EmpiricalRisk risk(train, a.model.l2);
    NewtonOptions opt;
    opt.max_iters = a.max_iters;
    const FitResult fit = minimize_newton(risk, init_params(p.spec, a.model.seed), opt);
    write_params(a.out, p.spec, fit.params);
    print_json_line(std::cout, json{{"out", a.out},
                                    {"model", p.spec.describe()},
                                    {"value", fit.value},
                                    {"grad_norm", fit.grad_norm},
                                    {"iterations", fit.iterations},
                                    {"converged", fit.converged}});
  };
  sub->callback([] {});
}

struct InfluenceArgs {
  ModelArgs model;
  std::string params;
  std::string solver = "auto";
  double damping = 1e-3;
  std::string out;
};

void add_influence(CLI::App& app, InfluenceArgs& a, const std::size_t& jobs,
                   std::function<void()>& action) {
  auto* sub = app.add_subcommand("influence", "Influence scores and weights at given parameters");
  add_model_options(sub, a.model);
  sub->add_option("--params", a.params, "Student parameter file")->required();
  sub->add_option("--solver", a.solver, "auto, dense or cg (auto: dense up to 2500 parameters)")->check(CLI::IsMember({"auto", "dense", "cg"}));
  sub->add_option("--damping", a.damping, "Hessian damping");
  sub->add_option("--out", a.out, "Output directory")->required();
  action = [&a, &jobs] {
    const auto p = load_problem(a.model);
    if (p.data.val.empty()) throw InputError("bundle has no validation split");
    const ParamVector theta = read_params(a.params, p.spec);
    const Model* teacher = p.teacher ? &*p.teacher : nullptr;
    const MlpLosses train = student_losses(p.spec, teacher, p.data.train, p.alpha);
    const MlpLosses val = student_losses(p.spec, teacher, p.data.val, p.alpha);
    IhvpSolverConfig solver;
    solver.method = pick_solver(a.solver, p.spec.param_count());
    solver.damping = a.damping;
    InfluenceReport r = influence_scores(train, val, theta.span(), a.model.l2, solver, jobs);
    assign_weights(r);
    fs::create_directories(a.out);
    write_json(fs::path(a.out) / "influence.json", to_json(r));
    write_influence_csv(fs::path(a.out) / "influence.csv", r);
    double norm = 0.0;
    for (double v : r.phi) norm += v * v;
    print_json_line(std::cout, json{{"out", a.out},
                                    {"n_train", r.phi.size()},
                                    {"phi_l2", std::sqrt(norm)},
                                    {"grad_norm", r.meta.grad_norm},
                                    {"solver", ihvp_method_name(solver.method)},
                                    {"hessian_positive_definite", r.meta.hessian_positive_definite}});
  };
  sub->callback([] {});
}

// ---------------------------------------------------------------- loo

struct LooArgs {
  ModelArgs model;
  std::optional<std::size_t> max_points;
  std::string solver = "auto";
  double damping = 1e-3;
  std::string toy;
  std::string out;
};

void add_loo(CLI::App& app, LooArgs& a, const std::size_t& jobs, std::function<void()>& action) {
  auto* sub = app.add_subcommand("loo", "Compare influence predictions with leave-one-out retraining");
  sub->add_option("--data", a.model.data, "Bundle directory");
  sub->add_option("--hidden", a.model.hidden, "Hidden sizes (default: none, i.e. logistic)");
  sub->add_option("--activation", a.model.activation, "tanh or relu");
  sub->add_option("--l2", a.model.l2, "L2 regularization");
  sub->add_option("--seed", a.model.seed, "Initialization seed");
  sub->add_option("--max-points", a.max_points, "Number of training indices to retrain");
  sub->add_option("--solver", a.solver, "auto, dense or cg (auto: dense up to 2500 parameters)")->check(CLI::IsMember({"auto", "dense", "cg"}));
  sub->add_option("--damping", a.damping, "Hessian damping for the influence prediction");
  sub->add_option("--toy", a.toy, "Built-in problem instead of --data")->check(CLI::IsMember({"quadratic"}));
  sub->add_option("--out", a.out, "Output directory")->required();
  action = [&a, &jobs] {
    if (a.toy.empty() == a.model.data.empty()) throw UsageError("give exactly one of --data and --toy");
    std::unique_ptr<ExampleLosses> train;
    std::unique_ptr<ExampleLosses> val;
    ParamVector init;
    double l2 = a.model.l2;
    double damping = a.damping;
    if (!a.toy.empty()) {
      // l_i = (theta - c_i)^2 / 2, train c = {0, 2}, val c = {3}.
      train = std::make_unique<QuadraticLosses>(std::vector<std::vector<double>>{{0.0}, {2.0}});
      val = std::make_unique<QuadraticLosses>(std::vector<std::vector<double>>{{3.0}});
      init = ParamVector(1, 0.0);
      l2 = 0.0;
      damping = 0.0;
    } else {
      const auto p = load_problem(a.model);
      if (p.data.val.empty()) throw InputError("bundle has no validation split");
      train = std::make_unique<MlpLosses>(supervised_losses(p.spec, p.data.train));
      val = std::make_unique<MlpLosses>(supervised_losses(p.spec, p.data.val));
      init = init_params(p.spec, a.model.seed);
    }
    const std::size_t n = train->size();
    const std::size_t m = std::min(n, a.max_points.value_or(n));
    const double d = static_cast<double>(train->dim());
    // Each retrain runs Newton with a dense finite-difference Hessian.
    const double estimate = static_cast<double>(m) * 20.0 * (d * d * static_cast<double>(n) + d * d * d);
    if (estimate > 5e11) {
      print_json_line(std::cerr, json{{"warning", "budget"},
                                      {"message", "leave-one-out sweep is expected to be slow"},
                                      {"estimated_flops", estimate}});
    }
    const LooOracle oracle(*train, *val, l2, init);
    if (!oracle.base_fit().converged) throw NumericError("base fit did not converge");
    IhvpSolverConfig solver;
    solver.method = pick_solver(a.solver, train->dim());
    solver.damping = damping;
    const InfluenceReport r = influence_scores(*train, *val, oracle.base_fit().params.span(), l2, solver, jobs);
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    const auto loo = oracle.sweep(idx, jobs);
    std::vector<double> predicted(m), actual(m), neg_phi(m);
    bool all_converged = true;
    std::size_t sign_agree = 0;
    for (std::size_t i = 0; i < m; ++i) {
      predicted[i] = -r.phi[i] / static_cast<double>(n);
      neg_phi[i] = -r.phi[i];
      actual[i] = loo[i].delta;
      all_converged = all_converged && loo[i].converged;
      if ((predicted[i] > 0) == (actual[i] > 0) && (predicted[i] < 0) == (actual[i] < 0)) ++sign_agree;
    }
    if (!all_converged) throw NumericError("a leave-one-out retrain did not converge");
    const auto rp = ranks(predicted);
    const auto ra = ranks(actual);
    const double rho = m >= 2 ? spearman(neg_phi, actual) : 0.0;
    fs::create_directories(a.out);
    {
      std::ofstream os(fs::path(a.out) / "loo.csv", std::ios::binary);
      os << "index,phi,predicted_delta,actual_delta,rank_predicted,rank_actual\n";
      for (std::size_t i = 0; i < m; ++i) {
        os << i << ',' << fmt(r.phi[i]) << ',' << fmt(predicted[i]) << ',' << fmt(actual[i]) << ','
           << fmt(rp[i]) << ',' << fmt(ra[i]) << '\n';
      }
    }
    const json summary{{"schema_version", kSchemaVersion},
                       {"n_train", n},
                       {"points", m},
                       {"spearman_rho", std::isfinite(rho) ? json(rho) : json(nullptr)},
                       {"sign_agreement", static_cast<double>(sign_agree) / static_cast<double>(m)},
                       {"base_grad_norm", oracle.base_fit().grad_norm},
                       {"base_val_loss", oracle.base_val_loss()}};
    write_json(fs::path(a.out) / "summary.json", summary);
    std::cout << "spearman_rho=" << fmt(rho) << '\n';
  };
  sub->callback([] {});
}

// ---------------------------------------------------------------- dual-risk

struct DualArgs {
  std::string losses;
  double delta = 0.0;
  std::string weights;
  std::string influence;
  std::string out;
};

void add_dual_risk(CLI::App& app, DualArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("dual-risk", "Worst-case risk over a chi-square ball");
  sub->add_option("--losses", a.losses, "File with one loss per line")->required();
  sub->add_option("--delta", a.delta, "Chi-square radius")->required();
  sub->add_option("--weights", a.weights, "Optional per-loss weights, one per line");
  sub->add_option("--influence", a.influence, "Influence report JSON for the Lipschitz bound");
  sub->add_option("--out", a.out, "Report file (default stdout)");
  action = [&a] {
    if (!(a.delta >= 0.0) || !std::isfinite(a.delta)) throw UsageError("--delta must be a nonnegative number");
    const auto losses = read_numbers(a.losses);
    std::vector<double> weights;
    if (!a.weights.empty()) weights = read_numbers(a.weights);
    DualRiskConfig cfg;
    cfg.delta = a.delta;
    RobustRiskReport r = dual_worst_case_risk(losses, cfg, weights);
    r.sigma = weight_gradient_bound(weight_fn).sigma;
    if (!a.influence.empty()) {
      const InfluenceReport inf = influence_from_json(read_json(a.influence));
      double norm = 0.0;
      for (double v : inf.phi) norm += v * v;
      r.lipschitz_bound = lipschitz_bound(r.sigma, a.delta, inf.n_train(), std::sqrt(norm));
    }
    const json j = to_json(r);
    if (a.out.empty()) {
      std::cout << j.dump(2) << '\n';
    } else {
      write_json(a.out, j);
    }
  };
  sub->callback([] {});
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
  std::size_t bins = 20;
  std::string loo;
};

struct LoadedRun {
  std::string dir;
  RunInfo info;
  std::vector<EvalPoint> metrics;
  std::optional<InfluenceReport> influence;  // last refresh
  std::vector<bool> mask;
};

std::vector<std::vector<double>> read_csv_rows(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
    rows.push_back(std::move(row));
  }
  return rows;
}

LoadedRun load_run(const std::string& dir) {
  LoadedRun r;
  r.dir = dir;
  r.info = run_info_from_json(read_json(fs::path(dir) / "config.json"));
  for (const auto& row : read_csv_rows(fs::path(dir) / "metrics.csv")) {
    if (row.size() != 14) throw InputError(dir + "/metrics.csv: expected 14 columns");
    EvalPoint e;
    e.iteration = static_cast<std::size_t>(row[0]);
    e.step = static_cast<std::size_t>(row[1]);
    SplitMetrics* ms[] = {&e.teacher_train, &e.teacher_val, &e.teacher_test,
                          &e.student_train, &e.student_val, &e.student_test};
    for (std::size_t k = 0; k < 6; ++k) *ms[k] = {row[2 + 2 * k], row[3 + 2 * k]};
    r.metrics.push_back(e);
  }
  if (r.metrics.empty()) throw InputError(dir + ": no evaluation points");
  for (std::size_t t = 0;; ++t) {
    const fs::path p = fs::path(dir) / ("influence_iter_" + std::to_string(t) + ".json");
    if (!fs::exists(p)) break;
    r.influence = influence_from_json(read_json(p));
  }
  if (fs::exists(fs::path(dir) / "noise_mask.csv")) {
    for (const auto& row : read_csv_rows(fs::path(dir) / "noise_mask.csv")) r.mask.push_back(row.at(1) != 0.0);
  }
  return r;
}

void check_compatible(const std::vector<LoadedRun>& runs) {
  const auto& ref = runs.front().info;
  std::map<std::uint64_t, std::uint64_t> data_by_seed;
  for (const auto& r : runs) {
    const auto& c = r.info.config;
    const auto why = [&](const std::string& what) {
      return InputError("runs " + runs.front().dir + " and " + r.dir + " differ in " + what +
                        "; refusing to aggregate");
    };
    if (!(r.info.student_spec == ref.student_spec)) throw why("student model");
    if (c.alpha != ref.config.alpha || c.max_steps != ref.config.max_steps ||
        c.repeats != ref.config.repeats || c.batch_size != ref.config.batch_size) {
      throw why("training budget or alpha");
    }
    const auto [it, inserted] = data_by_seed.emplace(c.seed, r.info.data_fingerprint);
    if (!inserted && it->second != r.info.data_fingerprint) throw why("dataset for the same seed");
  }
}

std::string arm_name(const RunInfo& info) {
  std::string s = info.mode;
  if (!info.mechanism.empty()) s += ":" + info.mechanism;
  if (info.unit_weights) s += ":unit";
  return s;
}

void add_report(CLI::App& app, ReportArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("report", "Aggregate run directories into tables and histograms");
  sub->add_option("--runs", a.runs, "Run directories")->required()->expected(1, -1);
  sub->add_option("--out", a.out, "Output directory")->required();
  sub->add_option("--bins", a.bins, "Weight histogram bins over [0, 2]")->check(CLI::PositiveNumber);
  sub->add_option("--loo", a.loo, "Directory written by the loo command");
  action = [&a] {
    const auto start = std::chrono::steady_clock::now();
    std::vector<LoadedRun> runs;
    for (const auto& d : a.runs) runs.push_back(load_run(d));
    check_compatible(runs);

    fs::create_directories(a.out);
    json report{{"schema_version", kSchemaVersion}};
    std::string ids;
    json configs = json::array();
    for (const auto& r : runs) {
      const json cj = to_json(r.info);
      ids += cj.dump();
      configs.push_back(json{{"dir", r.dir}, {"config", cj}});
    }
    {
      std::uint64_t h = 1469598103934665603ULL;
      for (unsigned char ch : ids) h = (h ^ ch) * 1099511628211ULL;
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
      report["experiment_id"] = buf;
    }
    report["runs"] = configs;

    // Side-by-side final metrics, one row per run.
    std::ofstream cmp(fs::path(a.out) / "comparison.csv", std::ios::binary);
    cmp << "run,arm,seed,student_test_acc,student_test_loss,teacher_test_acc,teacher_test_loss\n";
    std::map<std::string, std::vector<const EvalPoint*>> arms;
    for (const auto& r : runs) {
      const auto& e = r.metrics.back();
      cmp << r.dir << ',' << arm_name(r.info) << ',' << r.info.config.seed << ',' << fmt(e.student_test.accuracy)
          << ',' << fmt(e.student_test.mean_loss) << ',' << fmt(e.teacher_test.accuracy) << ','
          << fmt(e.teacher_test.mean_loss) << '\n';
      arms[arm_name(r.info)].push_back(&e);
    }
    std::ofstream arm_csv(fs::path(a.out) / "arms.csv", std::ios::binary);
    arm_csv << "arm,runs,mean_student_test_acc,mean_teacher_test_acc\n";
    json arm_json = json::array();
    for (const auto& [name, pts] : arms) {
      double s = 0.0, t = 0.0;
      for (const auto* e : pts) {
        s += e->student_test.accuracy;
        t += e->teacher_test.accuracy;
      }
      s /= static_cast<double>(pts.size());
      t /= static_cast<double>(pts.size());
      arm_csv << name << ',' << pts.size() << ',' << fmt(s) << ',' << fmt(t) << '\n';
      arm_json.push_back(json{{"arm", name},
                              {"runs", pts.size()},
                              {"mean_student_test_acc", s},
                              {"mean_teacher_test_acc", t}});
    }
    report["arms"] = arm_json;

    // Weight histograms from each run's last influence refresh, split by the noise mask.
    std::ofstream hist(fs::path(a.out) / "weight_histogram.csv", std::ios::binary);
    hist << "run,group,bin_lo,bin_hi,count\n";
    json hist_json = json::array();
    for (const auto& r : runs) {
      if (!r.influence) continue;
      const auto& w = r.influence->weights;
      const bool masked = r.mask.size() == w.size();
      std::vector<std::size_t> counts[2] = {std::vector<std::size_t>(a.bins, 0),
                                            std::vector<std::size_t>(a.bins, 0)};
      std::size_t n_group[2] = {0, 0}, below[2] = {0, 0};
      double sum[2] = {0.0, 0.0};
      for (std::size_t i = 0; i < w.size(); ++i) {
        const int g = masked && r.mask[i] ? 1 : 0;
        auto b = static_cast<std::size_t>(std::floor(w[i] / 2.0 * static_cast<double>(a.bins)));
        b = std::min(b, a.bins - 1);
        ++counts[g][b];
        ++n_group[g];
        sum[g] += w[i];
        if (w[i] < 1.0) ++below[g];
      }
      std::size_t total = 0;
      const char* names[2] = {"clean", "flipped"};
      json groups = json::object();
      for (int g = 0; g < 2; ++g) {
        for (std::size_t b = 0; b < a.bins; ++b) {
          const double lo = 2.0 * static_cast<double>(b) / static_cast<double>(a.bins);
          const double hi = 2.0 * static_cast<double>(b + 1) / static_cast<double>(a.bins);
          hist << r.dir << ',' << names[g] << ',' << fmt(lo) << ',' << fmt(hi) << ',' << counts[g][b] << '\n';
          total += counts[g][b];
        }
        groups[names[g]] = json{
            {"count", n_group[g]},
            {"counts", counts[g]},
            {"mean_weight", n_group[g] ? json(sum[g] / static_cast<double>(n_group[g])) : json(nullptr)},
            {"fraction_below_one",
             n_group[g] ? json(static_cast<double>(below[g]) / static_cast<double>(n_group[g])) : json(nullptr)}};
      }
      if (total != w.size()) throw NumericError("histogram counts do not sum to N_train");
      std::vector<double> edges(a.bins + 1);
      for (std::size_t b = 0; b <= a.bins; ++b) edges[b] = 2.0 * static_cast<double>(b) / static_cast<double>(a.bins);
      hist_json.push_back(json{{"run", r.dir}, {"bin_edges", edges}, {"groups", groups}, {"noise_mask", masked}});
    }
    report["weight_histograms"] = hist_json;

    if (!a.loo.empty()) {
      const json s = read_json(fs::path(a.loo) / "summary.json");
      report["oracle_spearman_rho"] = s.at("spearman_rho");
    } else {
      report["oracle_spearman_rho"] = nullptr;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report["timing"] = json{{"seconds", secs}};
    write_json(fs::path(a.out) / "report.json", report);
    print_json_line(std::cout, json{{"out", a.out}, {"runs", runs.size()}, {"arms", arms.size()}});
  };
  sub->callback([] {});
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Influence-weighted knowledge distillation toolkit", "kdaif"};
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t jobs = 1;
  try {
    jobs = default_jobs();
  } catch (const Error& e) {
    print_json_line(std::cerr, json{{"error", {{"kind", "usage"}, {"message", e.what()}}}});
    return 2;
  }
  app.add_option("--jobs", jobs, "Worker threads for influence and leave-one-out sweeps (default KDAIF_JOBS or 1)")
      ->check(CLI::PositiveNumber);

  std::function<void()> actions[7];
  GenDataArgs gen;
  TrainArgs train;
  FitArgs fit;
  InfluenceArgs influence;
  LooArgs loo;
  DualArgs dual;
  ReportArgs report;
  add_gen_data(app, gen, actions[0]);
  add_train(app, train, jobs, actions[1]);
  add_fit(app, fit, actions[2]);
  add_influence(app, influence, jobs, actions[3]);
  add_loo(app, loo, jobs, actions[4]);
  add_dual_risk(app, dual, actions[5]);
  add_report(app, report, actions[6]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_json_line(std::cerr, json{{"error", {{"kind", "usage"}, {"message", e.what()}}}});
    return 2;
  }

  const auto subs = app.get_subcommands();
  const std::string name = subs.front()->get_name();
  const char* names[7] = {"gen-data", "train", "fit", "influence", "loo", "dual-risk", "report"};
  try {
    for (int k = 0; k < 7; ++k) {
      if (name == names[k]) actions[k]();
    }
    return 0;
  } catch (const UsageError& e) {
    print_json_line(std::cerr, json{{"error", {{"kind", "usage"}, {"message", e.what()}}}});
    return 2;
  } catch (const SolverError& e) {
    print_json_line(std::cerr, json{{"error",
                                     {{"kind", e.kind()},
                                      {"message", e.what()},
                                      {"residual", e.residual()},
                                      {"iterations", e.iterations()}}}});
    return exit_code_for(e);
  } catch (const NumericError& e) {
    print_json_line(std::cerr,
                    json{{"error", {{"kind", e.kind()}, {"message", e.what()}, {"layer", e.layer()}}}});
    return exit_code_for(e);
  } catch (const Error& e) {
    print_json_line(std::cerr, json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}});
    return exit_code_for(e);
  } catch (const std::exception& e) {
    print_json_line(std::cerr, json{{"error", {{"kind", "internal"}, {"message", e.what()}}}});
    return 1;
  }
}

}  // namespace kdaif::cli
