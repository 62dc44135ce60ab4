#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "utrcaf/model.hpp"

namespace utrcaf {

// Two domains sharing class-conditional Gaussians on "clean" input
// dimensions. On the corrupt dimensions the target's class means are
// permuted across classes and shifted, so those dimensions discriminate
// within either domain but mislead across domains.
struct PlantedShiftSpec {
  int n_per_domain = 1000;
  int input_dim = 16;
  int num_classes = 4;
  double frac_corrupt = 0.5;
  double shift_strength = 3.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  // false keeps class means aligned on corrupt dims (shift only).
  bool permute_corrupt = true;

  int corrupt_count() const;
  void validate() const;
};

struct PlantedMeans {
  Matrix source;  // K×p
  Matrix target;  // K×p
  std::vector<int> corrupt_dims;
};

struct DatasetManifest {
  std::string source_path;
  std::string target_path;
  std::optional<std::vector<int>> ground_truth_corrupt_dims;
  nlohmann::json spec;
};

struct DomainPair {
  Dataset source;
  Dataset target;
  DatasetManifest manifest;
};

PlantedMeans planted_means(const PlantedShiftSpec& spec);
DomainPair gen_planted_shift(const PlantedShiftSpec& spec);

// Interleaved half circles centred at the origin; the target is drawn from
// the same generator (independent stream) and rotated by angle_degrees.
DomainPair gen_two_moons_rotated(int n, double angle_degrees, double noise, std::uint64_t seed);

nlohmann::json planted_spec_to_json(const PlantedShiftSpec& spec);
nlohmann::json manifest_to_json(const DatasetManifest& m);

// CSV with header "f0,...,f{p-1}[,y]".
std::string dataset_to_csv(const Dataset& ds);
Dataset dataset_from_csv(const std::string& text, const std::string& name = "dataset");
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace utrcaf
