#include "kdaif/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kdaif/error.hpp"

namespace kdaif {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'K', 'D', 'A', 'I', 'F', 'P', 'R', 'M'};
constexpr std::uint32_t kParamsVersion = 1;

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw InputError("truncated parameter file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// JSON has no NaN/inf; reports refuse to carry them.
double finite(double v, const char* field) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in field ") + field);
  return v;
}

std::vector<double> finite_all(const std::vector<double>& v, const char* field) {
  for (double x : v) finite(x, field);
  return v;
}

}  // namespace

void write_params(const std::filesystem::path& path, const MlpSpec& spec, const ParamVector& params) {
  if (params.size() != spec.param_count()) throw InputError("parameter count does not match spec");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(os, kParamsVersion);
  put_le<std::uint64_t>(os, spec.hash());
  put_le<std::uint64_t>(os, params.size());
  for (double v : params) put_le<double>(os, v);
  if (!os) throw InputError("failed writing " + path.string());
}

ParamVector read_params(const std::filesystem::path& path, const MlpSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw InputError(path.string() + " is not a parameter file");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kParamsVersion) throw InputError("unsupported parameter file version " + std::to_string(version));
  const auto hash = get_le<std::uint64_t>(is);
  if (hash != spec.hash()) {
    throw InputError("parameter file was written for a different model than " + spec.describe());
  }
  const auto count = get_le<std::uint64_t>(is);
  if (count != spec.param_count()) throw InputError("parameter count does not match spec");
  std::vector<double> v(count);
  for (auto& x : v) x = get_le<double>(is);
  return ParamVector(std::move(v));
}

json to_json(const MlpSpec& spec) {
  return json{{"layers", spec.layer_sizes},
              {"activation", activation_name(spec.activation)},
              {"describe", spec.describe()}};
}

MlpSpec spec_from_json(const json& j) {
  MlpSpec s;
  s.layer_sizes = j.at("layers").get<std::vector<std::size_t>>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  s.validate();
  return s;
}

json to_json(const TrainConfig& c) {
  return json{{"alpha", c.alpha},
              {"lr_teacher", c.lr_teacher},
              {"lr_student", c.lr_student},
              {"max_steps", c.max_steps},
              {"batch_size", c.batch_size},
              {"damping", c.damping},
              {"seed", c.seed},
              {"l2_reg", c.l2_reg},
              {"warmup_steps", c.warmup_steps},
              {"repeats", c.repeats},
              {"divergence_threshold", c.divergence_threshold}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.lr_teacher = j.at("lr_teacher").get<double>();
  c.lr_student = j.at("lr_student").get<double>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.damping = j.at("damping").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.l2_reg = j.at("l2_reg").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<long>();
  c.repeats = j.at("repeats").get<std::size_t>();
  c.divergence_threshold = j.at("divergence_threshold").get<double>();
  c.validate();
  return c;
}

json to_json(const InfluenceReport& r) {
  std::vector<std::size_t> idx(r.phi.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto& m = r.meta;
  return json{{"schema_version", kSchemaVersion},
              {"indices", idx},
              {"phi", finite_all(r.phi, "phi")},
              {"phi_norm", finite_all(r.phi_norm, "phi_norm")},
              {"weights", finite_all(r.weights, "weights")},
              {"epsilon", finite_all(r.epsilon, "epsilon")},
              {"meta",
               {{"damping", m.damping},
                {"l2_reg", m.l2_reg},
                {"solver", ihvp_method_name(m.solver)},
                {"val_fingerprint", m.val_fingerprint},
                {"n_val", m.n_val},
                {"grad_norm", finite(m.grad_norm, "grad_norm")},
                {"solver_iterations", m.solver_iterations},
                {"solver_residual", finite(m.solver_residual, "solver_residual")},
                {"hessian_positive_definite", m.hessian_positive_definite}}}};
}

InfluenceReport influence_from_json(const json& j) {
  if (j.value("schema_version", 0) != kSchemaVersion) throw InputError("unsupported influence report schema");
  InfluenceReport r;
  r.phi = j.at("phi").get<std::vector<double>>();
  r.phi_norm = j.at("phi_norm").get<std::vector<double>>();
  r.weights = j.at("weights").get<std::vector<double>>();
  r.epsilon = j.at("epsilon").get<std::vector<double>>();
  const auto n = r.phi.size();
  if (r.phi_norm.size() != n || r.weights.size() != n || r.epsilon.size() != n) {
    throw InputError("influence report columns differ in length");
  }
  const auto& m = j.at("meta");
  r.meta.damping = m.at("damping").get<double>();
  r.meta.l2_reg = m.at("l2_reg").get<double>();
  r.meta.solver = parse_ihvp_method(m.at("solver").get<std::string>());
  r.meta.val_fingerprint = m.at("val_fingerprint").get<std::uint64_t>();
  r.meta.n_val = m.at("n_val").get<std::size_t>();
  r.meta.grad_norm = m.at("grad_norm").get<double>();
  r.meta.solver_iterations = m.at("solver_iterations").get<std::size_t>();
  r.meta.solver_residual = m.at("solver_residual").get<double>();
  r.meta.hessian_positive_definite = m.at("hessian_positive_definite").get<bool>();
  return r;
}

void write_influence_csv(const std::filesystem::path& path, const InfluenceReport& r) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << "index,phi,phi_norm,weight,epsilon\n";
  for (std::size_t i = 0; i < r.phi.size(); ++i) {
    os << i << ',' << fmt(r.phi[i]) << ',' << fmt(r.phi_norm[i]) << ',' << fmt(r.weights[i]) << ','
       << fmt(r.epsilon[i]) << '\n';
  }
}

json to_json(const RobustRiskReport& r) {
  return json{{"schema_version", kSchemaVersion},
              {"dual_value", finite(r.dual_value, "dual_value")},
              {"eta_star", finite(r.eta_star, "eta_star")},
              {"eta_at_lower_bound", r.eta_at_lower_bound},
              {"mean_loss", finite(r.mean_loss, "mean_loss")},
              {"delta", r.delta},
              {"sigma", finite(r.sigma, "sigma")},
              {"lipschitz_bound", finite(r.lipschitz_bound, "lipschitz_bound")}};
}

std::vector<double> read_numbers(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ss(line);
    double v = 0.0;
    std::string rest;
    if (!(ss >> v) || (ss >> rest)) {
      if (lineno == 1 && out.empty()) continue;  // header
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected one number");
    }
    out.push_back(v);
  }
  return out;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

json to_json(const RunInfo& info) {
  return json{{"schema_version", kSchemaVersion},
              {"mode", info.mode},
              {"mechanism", info.mechanism},
              {"solver", info.solver},
              {"data_dir", info.data_dir},
              {"data_fingerprint", info.data_fingerprint},
              {"teacher", to_json(info.teacher_spec)},
              {"student", to_json(info.student_spec)},
              {"config", to_json(info.config)},
              {"labeled", info.labeled},
              {"unit_weights", info.unit_weights}};
}

RunInfo run_info_from_json(const json& j) {
  if (j.value("schema_version", 0) != kSchemaVersion) throw InputError("unsupported run config schema");
  RunInfo info;
  info.mode = j.at("mode").get<std::string>();
  info.mechanism = j.at("mechanism").get<std::string>();
  info.solver = j.at("solver").get<std::string>();
  info.data_dir = j.at("data_dir").get<std::string>();
  info.data_fingerprint = j.at("data_fingerprint").get<std::uint64_t>();
  info.teacher_spec = spec_from_json(j.at("teacher"));
  info.student_spec = spec_from_json(j.at("student"));
  info.config = train_config_from_json(j.at("config"));
  info.labeled = j.at("labeled").get<std::size_t>();
  info.unit_weights = j.at("unit_weights").get<bool>();
  return info;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EvalPoint> metrics) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << "iteration,step,teacher_train_acc,teacher_train_loss,teacher_val_acc,teacher_val_loss,"
        "teacher_test_acc,teacher_test_loss,student_train_acc,student_train_loss,student_val_acc,"
        "student_val_loss,student_test_acc,student_test_loss\n";
  for (const auto& e : metrics) {
    os << e.iteration << ',' << e.step;
    for (const auto* m : {&e.teacher_train, &e.teacher_val, &e.teacher_test, &e.student_train,
                          &e.student_val, &e.student_test}) {
      os << ',' << fmt(m->accuracy) << ',' << fmt(m->mean_loss);
    }
    os << '\n';
  }
}

void write_run(const std::filesystem::path& dir, const RunInfo& info, const DistillationRun& run,
               const std::vector<bool>& noise_mask) {
  std::filesystem::create_directories(dir);
  if (std::filesystem::exists(dir / "config.json")) {
    throw InputError(dir.string() + " already holds a run; run directories are never overwritten");
  }
  write_json(dir / "config.json", to_json(info));
  write_metrics_csv(dir / "metrics.csv", run.metrics);
  for (std::size_t t = 0; t < run.influence.size(); ++t) {
    write_json(dir / ("influence_iter_" + std::to_string(t) + ".json"), to_json(run.influence[t]));
  }
  write_params(dir / "final_params.bin", run.student.spec, run.student.params);
  if (run.teacher.params.size() > 0) {
    write_params(dir / "teacher_params.bin", run.teacher.spec, run.teacher.params);
  }
  if (!noise_mask.empty()) {
    std::ofstream mask(dir / "noise_mask.csv", std::ios::binary);
    mask << "index,flipped\n";
    for (std::size_t i = 0; i < noise_mask.size(); ++i) mask << i << ',' << (noise_mask[i] ? 1 : 0) << '\n';
  }
}

}  // namespace kdaif
