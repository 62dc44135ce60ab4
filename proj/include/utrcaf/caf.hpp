#pragma once

#include <string>
#include <vector>

#include "utrcaf/model.hpp"
#include "utrcaf/utr.hpp"

namespace utrcaf {

struct CafConfig {
  PerturbationConfig perturb;
  RiskThreshold thr;
  double lambda0 = 10.0;
  int lambda_cutoff_epoch = 10;
  double gamma = 0.9;
  // Weight on the entropy (discover) term; 0 gives the adaptation-only baseline.
  double discover_weight = 1.0;
  double div_weight = 0.0;
  double mixup_alpha = 0.3;  // 0 disables mixup
  bool freeze_classifier = true;
  TrainConfig train{.learning_rate = 0.001, .label_smoothing = 0.0};
  int max_epochs = 20;

  void validate() const;
};

struct HistoryEntry {
  int epoch = 0;
  std::string phase;  // "calibration" or "adaptation"
  std::string loss_name;
  double value = 0.0;
};

struct AdaptationState {
  ModelParams target_params;
  int epoch = 0;
  UtrDomain utr_d_source;
  Labels pseudo_labels;
  std::vector<int> risk_set;
  std::vector<HistoryEntry> loss_history;
};

// sigmoid(-x), elementwise.
Vector q_weight(const UtrDomain& utr_d);

// Each loss returns its value and the gradient with respect to its first
// matrix argument (target features or probabilities).

// Mean over rows of ||w ⊙ (source - target)||^2; gradient is on target_feats.
LossTerm loss_kd(const Matrix& source_feats, const Matrix& target_feats, const Vector& weights);
// Mean of log p[i, labels[i]] over the risk rows; zero when risk is empty.
LossTerm loss_forget(const Matrix& probs, const Labels& labels, const std::vector<int>& risk);
// Mean prediction entropy.
LossTerm loss_discover(const Matrix& probs);
// KL(mean prediction || uniform).
LossTerm loss_div(const Matrix& probs);
// Cross entropy against hard labels.
LossTerm loss_adapt(const Matrix& probs, const Labels& pseudo);

struct PseudoLabels {
  Labels labels;
  Matrix probs;
};

// Probability-weighted centroids, nearest-centroid assignment by cosine
// distance on features augmented with a constant 1, then one round of hard
// centroid refinement.
PseudoLabels pseudo_label(const ModelParams& params, const Matrix& X);

struct MixedBatch {
  Matrix X;
  Matrix targets;
};

MixedBatch mixup_with(const Matrix& X, const Matrix& targets, double lam,
                      const std::vector<int>& perm);
// Draws lam ~ Beta(alpha, alpha) and a row permutation from rng.
MixedBatch mixup_batch(const Matrix& X, const Matrix& targets, double alpha, RngStream& rng);

double lambda_schedule(int epoch, const CafConfig& cfg);

// The weighted calibration objective and its parts for one forward pass.
struct CalibrationObjective {
  double kd = 0.0;
  double forget = 0.0;
  double discover = 0.0;
  double div = 0.0;
  double total = 0.0;
  Matrix grad_z;
  Matrix grad_probs;
};

CalibrationObjective calibration_objective(const Matrix& source_z, const ForwardPass& pass,
                                           const Vector& weights, const Labels& semantics,
                                           const std::vector<int>& risk_rows, double lambda,
                                           const CafConfig& cfg);

AdaptationState init_state(const ModelParams& source_params, const Matrix& target_X,
                           const CafConfig& cfg);
AdaptationState calibration_epoch(AdaptationState state, const ModelParams& source_params,
                                  const Matrix& target_X, const CafConfig& cfg);
AdaptationState adaptation_epoch(AdaptationState state, const Matrix& target_X,
                                 const CafConfig& cfg);
// Target features only: labels never reach adaptation.
AdaptationState run_caf(const ModelParams& source_params, const Matrix& target_X,
                        const CafConfig& cfg);

// "epoch,phase,loss_name,value"
std::string history_to_csv(const std::vector<HistoryEntry>& history);

}  // namespace utrcaf
