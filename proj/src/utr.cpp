#include "utrcaf/utr.hpp"

#include <sstream>

#include "utrcaf/csv.hpp"
#include "utrcaf/error.hpp"
#include "utrcaf/io.hpp"

namespace utrcaf {

void PerturbationConfig::validate() const {
  if (T < 2) throw ConfigError("perturb.T must be >= 2 (variance needs two samples)");
  if (!(low <= high)) throw ConfigError("perturb.low must not exceed perturb.high");
}

void RiskThreshold::validate() const {
  if (!(value > 0.0)) throw ConfigError("risk threshold value must be > 0");
}

std::vector<ModelParams> draw_perturbed_models(const ModelParams& params,
                                               const PerturbationConfig& cfg) {
  cfg.validate();
  std::vector<ModelParams> models;
  models.reserve(static_cast<std::size_t>(cfg.T));
  for (int t = 0; t < cfg.T; ++t) {
    RngStream rng(cfg.seed, "perturb", static_cast<std::uint64_t>(t));
    models.push_back(perturb_params(params, cfg.noise_mode, cfg.low, cfg.high, rng));
  }
  return models;
}

UtrSpectrum spectrum_from_models(const std::vector<ModelParams>& models, const Matrix& X) {
  if (models.size() < 2) throw ConfigError("spectrum needs at least two perturbed models");
  if (X.rows() < 1) throw InputError("cannot compute a spectrum for zero instances");
  std::vector<Matrix> outputs;
  outputs.reserve(models.size());
  for (const auto& m : models) outputs.push_back(encode(m, X));
  const double T = static_cast<double>(outputs.size());
  Matrix mean = Matrix::Zero(outputs[0].rows(), outputs[0].cols());
  for (const auto& z : outputs) mean += z;
  mean /= T;
  Matrix var = Matrix::Zero(mean.rows(), mean.cols());
  for (const auto& z : outputs) var += (z - mean).cwiseAbs2();
  var /= T;
  return UtrSpectrum{std::move(var), {}};
}

UtrSpectrum channel_ud(const ModelParams& params, const Matrix& X, const PerturbationConfig& cfg) {
  return spectrum_from_models(draw_perturbed_models(params, cfg), X);
}

UtrDomain utr_domain(const UtrSpectrum& spectrum) {
  if (spectrum.values.rows() < 1) throw InputError("utr_domain of an empty spectrum");
  return UtrDomain{spectrum.values.colwise().mean().transpose()};
}

UtrDomain utr_domain_online(const std::optional<UtrDomain>& prev, const UtrSpectrum& batch,
                            double momentum) {
  if (!(momentum > 0.0 && momentum <= 1.0))
    throw ConfigError("moving-average momentum must be in (0, 1]");
  UtrDomain current = utr_domain(batch);
  if (!prev) return current;
  if (prev->values.size() != current.values.size())
    throw DimensionError("running UTR_D has " + std::to_string(prev->values.size()) +
                         " channels, batch has " + std::to_string(current.values.size()));
  return UtrDomain{(1.0 - momentum) * prev->values + momentum * current.values};
}

UtrInstance utr_instance(const UtrSpectrum& spectrum) {
  if (spectrum.values.cols() < 1) throw InputError("utr_instance of a zero-channel spectrum");
  return UtrInstance{spectrum.values.rowwise().mean()};
}

std::vector<int> select_risk(const UtrInstance& utr_i, const RiskThreshold& thr) {
  if (utr_i.values.size() < 1) throw InputError("select_risk on an empty UTR_I");
  const double cut =
      thr.mode == RiskThreshold::Mode::absolute ? thr.value : thr.value * utr_i.values.mean();
  std::vector<int> out;
  for (Eigen::Index i = 0; i < utr_i.values.size(); ++i)
    if (utr_i.values(i) > cut) out.push_back(static_cast<int>(i));
  return out;
}

std::string spectrum_to_csv(const UtrSpectrum& spectrum) {
  std::ostringstream os;
  os << "instance";
  for (Eigen::Index c = 0; c < spectrum.values.cols(); ++c) os << ",ch" << c;
  os << "\n";
  for (Eigen::Index r = 0; r < spectrum.values.rows(); ++r) {
    os << r;
    for (Eigen::Index c = 0; c < spectrum.values.cols(); ++c)
      os << "," << format_double(spectrum.values(r, c));
    os << "\n";
  }
  return os.str();
}

UtrSpectrum spectrum_from_csv(const std::string& text) {
  const CsvTable t = parse_numeric_csv(text, "spectrum");
  if (t.header.empty() || t.header[0] != "instance")
    throw ParseError("spectrum: header must start with 'instance'");
  for (std::size_t c = 1; c < t.header.size(); ++c)
    if (t.header[c] != "ch" + std::to_string(c - 1))
      throw ParseError("spectrum: unexpected header cell '" + t.header[c] + "'");
  UtrSpectrum s;
  s.values.resize(static_cast<Eigen::Index>(t.rows.size()),
                  static_cast<Eigen::Index>(t.header.size()) - 1);
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 1; c < t.header.size(); ++c)
      s.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c) - 1) = t.rows[r][c];
  return s;
}

std::string vector_to_csv(const Vector& v) {
  std::ostringstream os;
  os << "value\n";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << format_double(v(i)) << "\n";
  return os.str();
}

Vector vector_from_csv(const std::string& text) {
  const CsvTable t = parse_numeric_csv(text, "vector");
  if (t.header.size() != 1 || t.header[0] != "value")
    throw ParseError("vector: header must be 'value'");
  Vector v(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) v(static_cast<Eigen::Index>(i)) = t.rows[i][0];
  return v;
}

}  // namespace utrcaf
