#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdaif/distill.hpp"
#include "kdaif/influence.hpp"
#include "kdaif/model.hpp"
#include "kdaif/robust_risk.hpp"

namespace kdaif {

inline constexpr int kSchemaVersion = 1;

// Binary parameter file: "KDAIFPRM", u32 version, u64 spec hash, u64 count,
// then count little-endian doubles.
void write_params(const std::filesystem::path& path, const MlpSpec& spec, const ParamVector& params);
// Throws InputError when the stored hash differs from spec.hash().
ParamVector read_params(const std::filesystem::path& path, const MlpSpec& spec);

nlohmann::json to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const InfluenceReport& report);
InfluenceReport influence_from_json(const nlohmann::json& j);
// index,phi,phi_norm,weight,epsilon
void write_influence_csv(const std::filesystem::path& path, const InfluenceReport& report);

nlohmann::json to_json(const RobustRiskReport& report);

// One number per line (blank lines and a non-numeric header line are skipped).
std::vector<double> read_numbers(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// Everything needed to interpret a run directory besides the run itself.
struct RunInfo {
  std::string mode;       // kd, online, kdaif, semi, supervised
  std::string mechanism;  // empty unless mode is kdaif or semi
  std::string solver;
  std::string data_dir;
  std::uint64_t data_fingerprint = 0;
  MlpSpec teacher_spec;
  MlpSpec student_spec;
  TrainConfig config;
  std::size_t labeled = 0;  // semi only
  bool unit_weights = false;
};

nlohmann::json to_json(const RunInfo& info);
RunInfo run_info_from_json(const nlohmann::json& j);

// config.json, metrics.csv, influence_iter_<t>.json, final_params.bin,
// teacher_params.bin, noise_mask.csv (copied from the bundle when present).
void write_run(const std::filesystem::path& dir, const RunInfo& info, const DistillationRun& run,
               const std::vector<bool>& noise_mask = {});

void write_metrics_csv(const std::filesystem::path& path, std::span<const EvalPoint> metrics);

}  // namespace kdaif
