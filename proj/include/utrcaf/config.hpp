#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "utrcaf/caf.hpp"
#include "utrcaf/model.hpp"
#include "utrcaf/synth.hpp"
#include "utrcaf/utr.hpp"

namespace utrcaf {

enum class Generator { planted_shift, two_moons, none };

struct TwoMoonsSpec {
  int n = 500;
  double angle_degrees = 30.0;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  int split_m = 0;  // 0 means half the bottleneck
  int curve_points = 20;
  std::uint64_t seed = 0;
};

// Empty paths are derived from out_dir.
struct PathsConfig {
  std::string out_dir = "out";
  std::string source_data;
  std::string target_data;
  std::string source_model;
};

struct RunConfig {
  ArchitectureSpec arch{16, {64}, 32, 4, Activation::relu};
  TrainConfig train;
  PerturbationConfig perturb;
  CafConfig caf;  // caf.perturb mirrors perturb
  EvalConfig eval;
  Generator generator = Generator::planted_shift;
  PlantedShiftSpec planted;
  TwoMoonsSpec moons;
  PathsConfig paths;

  // Checks every section and their cross-constraints; throws ConfigError.
  void validate() const;
  int split_m() const { return eval.split_m > 0 ? eval.split_m : arch.bottleneck_dim / 2; }
};

// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);
nlohmann::json caf_config_to_json(const CafConfig& cfg);

void override_seeds(RunConfig& cfg, std::uint64_t seed);
// Reads UTRCAF_SEED when set; throws ConfigError if it is not an unsigned integer.
std::optional<std::uint64_t> seed_from_env();

}  // namespace utrcaf
