#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "utrcaf/model.hpp"

namespace utrcaf {

// How the source encoder is perturbed to probe its sensitivity: T draws of
// multiplicative noise (1 + r), r ~ U(low, high).
struct PerturbationConfig {
  int T = 2;
  double low = -0.05;
  double high = 0.05;
  NoiseMode noise_mode = NoiseMode::per_parameter;
  std::uint64_t seed = 0;

  void validate() const;
};

// n×d matrix of per-instance, per-channel uncertainty distances.
struct UtrSpectrum {
  Matrix values;
  std::string model_tag;
};

struct UtrDomain {
  Vector values;  // one entry per channel
};

struct UtrInstance {
  Vector values;  // one entry per instance
};

struct RiskThreshold {
  enum class Mode { absolute, mean_multiple };
  Mode mode = Mode::mean_multiple;
  double value = 3.0;

  void validate() const;
};

// The T perturbed encoders used by channel_ud, drawn from cfg.seed.
std::vector<ModelParams> draw_perturbed_models(const ModelParams& params,
                                               const PerturbationConfig& cfg);

// Population variance (divide by T) of each channel across the perturbed
// encoders' outputs, one row per input instance.
UtrSpectrum spectrum_from_models(const std::vector<ModelParams>& models, const Matrix& X);

UtrSpectrum channel_ud(const ModelParams& params, const Matrix& X, const PerturbationConfig& cfg);

UtrDomain utr_domain(const UtrSpectrum& spectrum);
// Moving average: (1 - momentum) * prev + momentum * batch mean.
UtrDomain utr_domain_online(const std::optional<UtrDomain>& prev, const UtrSpectrum& batch,
                            double momentum);
UtrInstance utr_instance(const UtrSpectrum& spectrum);

// Ascending indices whose value strictly exceeds the threshold.
std::vector<int> select_risk(const UtrInstance& utr_i, const RiskThreshold& thr);

// "instance,ch0,...,ch{d-1}"
std::string spectrum_to_csv(const UtrSpectrum& spectrum);
UtrSpectrum spectrum_from_csv(const std::string& text);
// Single column with header "value".
std::string vector_to_csv(const Vector& v);
Vector vector_from_csv(const std::string& text);

}  // namespace utrcaf
