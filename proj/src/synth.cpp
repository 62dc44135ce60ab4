#include "utrcaf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "utrcaf/csv.hpp"
#include "utrcaf/error.hpp"
#include "utrcaf/io.hpp"

namespace utrcaf {
namespace {

// Spread of the class means relative to unit-variance noise.
constexpr double kMeanScale = 1.5;

Dataset sample_domain(const Matrix& means, int n, double noise, RngStream& rng,
                      const std::string& name) {
  const auto K = static_cast<int>(means.rows());
  Dataset ds;
  ds.name = name;
  ds.features.resize(n, means.cols());
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = i % K;
    y[static_cast<std::size_t>(i)] = c;
    for (Eigen::Index j = 0; j < means.cols(); ++j)
      ds.features(i, j) = means(c, j) + noise * rng.normal();
  }
  ds.labels = std::move(y);
  return ds;
}

Dataset sample_moons(int n, double noise, RngStream& rng, const std::string& name) {
  Dataset ds;
  ds.name = name;
  ds.features.resize(n, 2);
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x0 = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double x1 = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
    // Centre the pair of moons on the origin.
    x0 -= 0.5;
    x1 -= 0.25;
    ds.features(i, 0) = x0 + noise * rng.normal();
    ds.features(i, 1) = x1 + noise * rng.normal();
    y[static_cast<std::size_t>(i)] = c;
  }
  ds.labels = std::move(y);
  return ds;
}

}  // namespace

int PlantedShiftSpec::corrupt_count() const {
  return static_cast<int>(std::floor(frac_corrupt * input_dim));
}

void PlantedShiftSpec::validate() const {
  if (n_per_domain < 1) throw ConfigError("data.planted_shift.n_per_domain must be >= 1");
  if (input_dim < 1) throw ConfigError("data.planted_shift.input_dim must be >= 1");
  if (num_classes < 2) throw ConfigError("data.planted_shift.num_classes must be >= 2");
  if (!(frac_corrupt > 0.0 && frac_corrupt < 1.0))
    throw ConfigError("data.planted_shift.frac_corrupt must be in (0,1)");
  const int m = corrupt_count();
  if (m < 1 || m > input_dim - 1)
    throw ConfigError(
        "data.planted_shift.frac_corrupt: floor(frac_corrupt * input_dim) must lie in [1, "
        "input_dim - 1]");
  if (!(shift_strength >= 0.0)) throw ConfigError("data.planted_shift.shift_strength must be >= 0");
  if (!(noise > 0.0)) throw ConfigError("data.planted_shift.noise must be > 0");
}

PlantedMeans planted_means(const PlantedShiftSpec& spec) {
  spec.validate();
  const int K = spec.num_classes, p = spec.input_dim;
  RngStream rng(spec.seed, "planted_means");
  PlantedMeans out;
  out.source.resize(K, p);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < p; ++j) out.source(k, j) = kMeanScale * rng.normal();

  RngStream pick(spec.seed, "planted_dims");
  auto order = shuffled_indices(p, pick);
  out.corrupt_dims.assign(order.begin(), order.begin() + spec.corrupt_count());
  std::sort(out.corrupt_dims.begin(), out.corrupt_dims.end());

  out.target = out.source;
  for (int k = 0; k < K; ++k) {
    const int donor = spec.permute_corrupt ? (k + 1) % K : k;
    for (int j : out.corrupt_dims) out.target(k, j) = out.source(donor, j) + spec.shift_strength;
  }
  return out;
}

nlohmann::json planted_spec_to_json(const PlantedShiftSpec& spec) {
  return {{"n_per_domain", spec.n_per_domain}, {"input_dim", spec.input_dim},
          {"num_classes", spec.num_classes},   {"frac_corrupt", spec.frac_corrupt},
          {"shift_strength", spec.shift_strength}, {"noise", spec.noise},
          {"seed", spec.seed},                 {"permute_corrupt", spec.permute_corrupt}};
}

DomainPair gen_planted_shift(const PlantedShiftSpec& spec) {
  const PlantedMeans means = planted_means(spec);
  RngStream src_rng(spec.seed, "planted_source");
  RngStream tgt_rng(spec.seed, "planted_target");
  DomainPair out;
  out.source = sample_domain(means.source, spec.n_per_domain, spec.noise, src_rng, "source");
  out.target = sample_domain(means.target, spec.n_per_domain, spec.noise, tgt_rng, "target");
  out.manifest.ground_truth_corrupt_dims = means.corrupt_dims;
  out.manifest.spec = planted_spec_to_json(spec);
  out.manifest.spec["generator"] = "planted_shift";
  return out;
}

DomainPair gen_two_moons_rotated(int n, double angle_degrees, double noise, std::uint64_t seed) {
  if (n < 4) throw ConfigError("data.two_moons.n must be >= 4");
  if (!(noise >= 0.0)) throw ConfigError("data.two_moons.noise must be >= 0");
  RngStream src_rng(seed, "moons_source");
  RngStream tgt_rng(seed, "moons_target");
  DomainPair out;
  out.source = sample_moons(n, noise, src_rng, "source");
  out.target = sample_moons(n, noise, tgt_rng, "target");
  const double a = angle_degrees * std::numbers::pi / 180.0;
  Eigen::Matrix2d rot;
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  out.target.features = out.target.features * rot.transpose();
  out.manifest.spec = {{"generator", "two_moons"},
                       {"n", n},
                       {"angle_degrees", angle_degrees},
                       {"noise", noise},
                       {"seed", seed}};
  return out;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j{{"source_path", m.source_path}, {"target_path", m.target_path}, {"spec", m.spec}};
  if (m.ground_truth_corrupt_dims)
    j["ground_truth_corrupt_dims"] = *m.ground_truth_corrupt_dims;
  else
    j["ground_truth_corrupt_dims"] = nullptr;
  return j;
}

std::string dataset_to_csv(const Dataset& ds) {
  std::ostringstream os;
  for (int j = 0; j < ds.dim(); ++j) os << (j ? "," : "") << "f" << j;
  if (ds.labeled()) os << ",y";
  os << "\n";
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.dim(); ++j) os << (j ? "," : "") << format_double(ds.features(i, j));
    if (ds.labeled()) os << "," << (*ds.labels)[static_cast<std::size_t>(i)];
    os << "\n";
  }
  return os.str();
}

Dataset dataset_from_csv(const std::string& text, const std::string& name) {
  const CsvTable t = parse_numeric_csv(text, name);
  const bool labeled = !t.header.empty() && t.header.back() == "y";
  const std::size_t p = t.header.size() - (labeled ? 1 : 0);
  if (p < 1) throw ParseError(name + ":1: header has no feature columns");
  for (std::size_t j = 0; j < p; ++j)
    if (t.header[j] != "f" + std::to_string(j))
      throw ParseError(name + ":1: expected header cell 'f" + std::to_string(j) + "', found '" +
                       t.header[j] + "'");
  if (t.rows.empty()) throw ParseError(name + ": no data rows");
  Dataset ds;
  ds.name = name;
  ds.features.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(p));
  Labels y;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t j = 0; j < p; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][j];
    if (labeled) {
      const double v = t.rows[i][p];
      if (v < 0 || v != std::floor(v))
        throw ParseError(name + ":" + std::to_string(i + 2) + ": label must be a nonnegative integer");
      y.push_back(static_cast<int>(v));
    }
  }
  if (labeled) ds.labels = std::move(y);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, dataset_to_csv(ds));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_csv(read_text_file(path), path.string());
}

}  // namespace utrcaf
