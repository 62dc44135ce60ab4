#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "utrcaf/model.hpp"
#include "utrcaf/utr.hpp"

namespace utrcaf {

struct ChannelSplit {
  std::vector<int> low_idx;
  std::vector<int> high_idx;
};

// The m smallest UTR_D channels (ties to the lower index) versus the rest.
ChannelSplit split_channels(const UtrDomain& utr_d, int m);

Matrix select_columns(const Matrix& M, const std::vector<int>& cols);

// Top-1 accuracy with every channel outside keep_idx zeroed before the classifier.
double masked_accuracy(const ModelParams& params, const Dataset& data,
                       const std::vector<int>& keep_idx);

// Square root of the biased squared MMD under a Gaussian kernel whose
// bandwidth is the median pairwise distance of the pooled rows.
double mmd(const Matrix& A, const Matrix& B);
double median_pairwise_distance(const Matrix& pooled);

// 2(1 - 2 err) of a logistic domain classifier on a seeded 50/50 split,
// clamped to [0, 2].
double proxy_a_distance(const Matrix& A, const Matrix& B, RngStream& rng);

struct AngleResult {
  double value = 0.0;
  int pairs = 0;  // directions actually compared
};

// Mean |cos| between corresponding top right singular vectors of the centred
// inputs, k = min(k_max, available rank).
AngleResult corresponding_angle(const Matrix& A, const Matrix& B, int k_max = 10);

double leep(const Matrix& source_probs, const Labels& target_labels, int num_target_classes);
double nce(const std::vector<int>& source_hard, const Labels& target_labels);

struct LogmeResult {
  double value = 0.0;  // mean log evidence per instance over classes
  bool converged = true;
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> evidence;  // per class, divided by n
};

LogmeResult logme(const Matrix& features, const Labels& labels, int max_iter = 1000,
                  double tol = 1e-10);

struct CurvePoint {
  double threshold = 0.0;
  std::optional<double> accuracy;  // absent when no instance exceeds the threshold
  int count = 0;
};

std::vector<CurvePoint> accuracy_utr_curve(const UtrInstance& utr_i,
                                           const std::vector<bool>& correct,
                                           const std::vector<double>& thresholds);
// Empirical quantiles j/count of utr_i for j = 0..count-1.
std::vector<double> quantile_thresholds(const UtrInstance& utr_i, int count);

enum class Direction { lower_better, higher_better };

struct Measurement {
  std::string name;
  double z_low = 0.0;
  double z_high = 0.0;
  Direction direction = Direction::lower_better;
  std::string note;

  bool low_favored() const {
    return direction == Direction::lower_better ? z_low < z_high : z_low > z_high;
  }
};

struct MeasurementReport {
  std::vector<Measurement> measurements;  // mmd, a_distance, corresponding_angle, leep, nce, logme, accuracy

  const Measurement& at(const std::string& name) const;
};

// Source labels are only the model's own predictions; target labels serve
// evaluation alone.
MeasurementReport build_report(const ModelParams& source_params, const Dataset& source_data,
                               const Dataset& target_data, const ChannelSplit& split,
                               std::uint64_t seed);

nlohmann::json report_to_json(const MeasurementReport& report);
std::string report_to_csv(const MeasurementReport& report);
// "threshold,accuracy,count" with "null" for empty bins.
std::string curve_to_csv(const std::vector<CurvePoint>& curve);

}  // namespace utrcaf
