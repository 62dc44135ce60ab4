#include "utrcaf/caf.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "utrcaf/error.hpp"
#include "utrcaf/io.hpp"

namespace utrcaf {
namespace {

void check_rows(const Matrix& probs, const Labels& labels, const char* what) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
    throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(probs.rows()) + " rows");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= probs.cols())
      throw LabelError(std::string(what) + ": label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0, " + std::to_string(probs.cols()) + ")");
}

Matrix one_hot(const Labels& labels, int K) { return smoothed_targets(labels, K, 0.0); }

void fail_if_nonfinite(double value, const char* phase, int epoch, int batch, double lr) {
  if (std::isfinite(value)) return;
  std::ostringstream os;
  os << phase << " diverged at epoch " << epoch << ", batch " << batch << " (learning_rate " << lr
     << ")";
  throw DivergenceError(os.str());
}

struct Batches {
  std::vector<int> order;
  int size;
  int count() const {
    return static_cast<int>((order.size() + static_cast<std::size_t>(size) - 1) /
                            static_cast<std::size_t>(size));
  }
  std::span<const int> rows(int b) const {
    const std::size_t start = static_cast<std::size_t>(b) * static_cast<std::size_t>(size);
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(size));
    return {order.data() + start, stop - start};
  }
};

Batches epoch_batches(int n, const CafConfig& cfg, int epoch) {
  RngStream rng(cfg.train.seed, "caf_shuffle", static_cast<std::uint64_t>(epoch));
  return {shuffled_indices(n, rng), cfg.train.batch_size};
}

void push_means(AdaptationState& state, const char* phase,
                const std::vector<std::pair<std::string, double>>& sums, int batches) {
  for (const auto& [name, sum] : sums)
    state.loss_history.push_back({state.epoch, phase, name, sum / batches});
}

}  // namespace

void CafConfig::validate() const {
  perturb.validate();
  thr.validate();
  train.validate();
  if (!(lambda0 >= 0.0)) throw ConfigError("caf.lambda0 must be >= 0");
  if (lambda_cutoff_epoch < 0) throw ConfigError("caf.lambda_cutoff_epoch must be >= 0");
  if (!(gamma >= 0.0)) throw ConfigError("caf.gamma must be >= 0");
  if (!(discover_weight >= 0.0)) throw ConfigError("caf.discover_weight must be >= 0");
  if (!(div_weight >= 0.0)) throw ConfigError("caf.div_weight must be >= 0");
  if (!(mixup_alpha >= 0.0)) throw ConfigError("caf.mixup_alpha must be >= 0");
  if (max_epochs < 2) throw ConfigError("caf.max_epochs must be >= 2");
  if (lambda_cutoff_epoch > max_epochs)
    throw ConfigError("caf.lambda_cutoff_epoch must not exceed caf.max_epochs");
}

Vector q_weight(const UtrDomain& utr_d) {
  return utr_d.values.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(x)); });
}

LossTerm loss_kd(const Matrix& source_feats, const Matrix& target_feats, const Vector& weights) {
  if (source_feats.rows() != target_feats.rows() || source_feats.cols() != target_feats.cols() ||
      weights.size() != source_feats.cols())
    throw DimensionError("loss_kd: source, target and weight shapes disagree");
  const double n = static_cast<double>(source_feats.rows());
  const Eigen::RowVectorXd w2 = weights.cwiseAbs2().transpose();
  const Matrix diff = source_feats - target_feats;
  LossTerm out;
  out.value = (diff.cwiseAbs2().array().rowwise() * w2.array()).sum() / n;
  out.grad = (-2.0 / n) * (diff.array().rowwise() * w2.array()).matrix();
  return out;
}

LossTerm loss_forget(const Matrix& probs, const Labels& labels, const std::vector<int>& risk) {
  check_rows(probs, labels, "loss_forget");
  LossTerm out{0.0, Matrix::Zero(probs.rows(), probs.cols())};
  if (risk.empty()) return out;
  const double m = static_cast<double>(risk.size());
  for (int i : risk) {
    if (i < 0 || i >= probs.rows())
      throw IndexError("loss_forget: risk index " + std::to_string(i) + " outside [0, " +
                       std::to_string(probs.rows()) + ")");
    const int y = labels[static_cast<std::size_t>(i)];
    const double p = probs(i, y);
    out.value += std::log(std::clamp(p, kLogFloor, 1.0));
    if (p > kLogFloor) out.grad(i, y) += 1.0 / (p * m);
  }
  out.value /= m;
  return out;
}

LossTerm loss_discover(const Matrix& probs) {
  const double n = static_cast<double>(probs.rows());
  LossTerm out{0.0, Matrix::Zero(probs.rows(), probs.cols())};
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double p = probs(i, k);
      if (p <= 0.0) {
        out.grad(i, k) = -std::log(kLogFloor) / n;
        continue;
      }
      const double lp = std::log(std::max(p, kLogFloor));
      out.value -= p * lp;
      out.grad(i, k) = -(p > kLogFloor ? lp + 1.0 : lp) / n;
    }
  out.value /= n;
  return out;
}

LossTerm loss_div(const Matrix& probs) {
  const double n = static_cast<double>(probs.rows());
  const double K = static_cast<double>(probs.cols());
  const Eigen::RowVectorXd mean = probs.colwise().mean();
  Eigen::RowVectorXd g(mean.size());
  double value = 0.0;
  for (Eigen::Index k = 0; k < mean.size(); ++k) {
    const double q = mean(k);
    const double lq = std::log(std::max(q, kLogFloor) * K);
    if (q > 0.0) value += q * lq;
    g(k) = (q > kLogFloor ? lq + 1.0 : lq) / n;
  }
  return LossTerm{value, g.replicate(probs.rows(), 1)};
}

LossTerm loss_adapt(const Matrix& probs, const Labels& pseudo) {
  check_rows(probs, pseudo, "loss_adapt");
  return soft_cross_entropy(probs, one_hot(pseudo, static_cast<int>(probs.cols())));
}

PseudoLabels pseudo_label(const ModelParams& params, const Matrix& X) {
  const Matrix z = encode(params, X);
  PseudoLabels out;
  out.probs = softmax(classify(params, z));
  const Eigen::Index n = z.rows(), K = out.probs.cols();
  if (K == 1) {
    out.labels.assign(static_cast<std::size_t>(n), 0);
    return out;
  }
  Matrix f(n, z.cols() + 1);
  f << z, Matrix::Ones(n, 1);
  const Vector fnorm = f.rowwise().norm();

  auto assign = [&](const Matrix& centroids) {
    const Vector cnorm = centroids.rowwise().norm();
    Labels labels(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        double d;
        if (fnorm(i) == 0.0)
          d = (f.row(i) - centroids.row(k)).norm();
        else if (cnorm(k) == 0.0)
          d = 1.0;
        else
          d = 1.0 - f.row(i).dot(centroids.row(k)) / (fnorm(i) * cnorm(k));
        if (k == 0 || d < best_d) {
          best = static_cast<int>(k);
          best_d = d;
        }
      }
      labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
  };
  // Empty classes keep the centroid they had before.
  auto centroids_from = [&](const Matrix& weights, Matrix centroids) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const double mass = weights.col(k).sum();
      if (mass > 0.0) centroids.row(k) = (weights.col(k).transpose() * f) / mass;
    }
    return centroids;
  };

  Matrix centroids = centroids_from(out.probs, Matrix::Zero(K, f.cols()));
  Labels labels = assign(centroids);
  centroids = centroids_from(one_hot(labels, static_cast<int>(K)), centroids);
  out.labels = assign(centroids);
  return out;
}

MixedBatch mixup_with(const Matrix& X, const Matrix& targets, double lam,
                      const std::vector<int>& perm) {
  if (static_cast<Eigen::Index>(perm.size()) != X.rows() || targets.rows() != X.rows())
    throw DimensionError("mixup: permutation, inputs and targets must have equal rows");
  return {lam * X + (1.0 - lam) * gather_rows(X, perm),
          lam * targets + (1.0 - lam) * gather_rows(targets, perm)};
}

MixedBatch mixup_batch(const Matrix& X, const Matrix& targets, double alpha, RngStream& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be > 0");
  const double lam = rng.beta_symmetric(alpha);
  return mixup_with(X, targets, lam, shuffled_indices(static_cast<int>(X.rows()), rng));
}

double lambda_schedule(int epoch, const CafConfig& cfg) {
  return epoch < cfg.lambda_cutoff_epoch ? cfg.lambda0 : 0.0;
}

CalibrationObjective calibration_objective(const Matrix& source_z, const ForwardPass& pass,
                                           const Vector& weights, const Labels& semantics,
                                           const std::vector<int>& risk_rows, double lambda,
                                           const CafConfig& cfg) {
  const LossTerm kd = loss_kd(source_z, pass.z, weights);
  const LossTerm f = loss_forget(pass.probs, semantics, risk_rows);
  const LossTerm d = loss_discover(pass.probs);
  const LossTerm v = loss_div(pass.probs);
  CalibrationObjective out;
  out.kd = kd.value;
  out.forget = f.value;
  out.discover = d.value;
  out.div = v.value;
  out.total = lambda * kd.value + cfg.gamma * f.value + cfg.discover_weight * d.value +
              cfg.div_weight * v.value;
  out.grad_z = lambda * kd.grad;
  out.grad_probs = cfg.gamma * f.grad + cfg.discover_weight * d.grad + cfg.div_weight * v.grad;
  return out;
}

AdaptationState init_state(const ModelParams& source_params, const Matrix& target_X,
                           const CafConfig& cfg) {
  cfg.validate();
  source_params.validate();
  if (target_X.rows() < 1) throw InputError("target data is empty");
  if (target_X.cols() != source_params.arch.input_dim)
    throw DimensionError("target data has " + std::to_string(target_X.cols()) +
                         " features, the source model expects " +
                         std::to_string(source_params.arch.input_dim));
  AdaptationState state;
  state.target_params = source_params;
  state.utr_d_source = utr_domain(channel_ud(source_params, target_X, cfg.perturb));
  return state;
}

AdaptationState calibration_epoch(AdaptationState state, const ModelParams& source_params,
                                  const Matrix& target_X, const CafConfig& cfg) {
  const int n = static_cast<int>(target_X.rows());
  const double lambda = lambda_schedule(state.epoch, cfg);
  const Vector weights = q_weight(state.utr_d_source);
  const Matrix source_z = encode(source_params, target_X);
  const bool from_source = state.epoch == 0;

  // Semantics and UTR_I come from the source model in the first epoch and
  // from the target model afterwards.
  PerturbationConfig pcfg = cfg.perturb;
  pcfg.seed = derive_seed(cfg.perturb.seed, "calibration", static_cast<std::uint64_t>(state.epoch));
  const ModelParams& inference_at_start = from_source ? source_params : state.target_params;
  state.risk_set = select_risk(utr_instance(channel_ud(inference_at_start, target_X, pcfg)), cfg.thr);
  std::vector<char> at_risk(static_cast<std::size_t>(n), 0);
  for (int i : state.risk_set) at_risk[static_cast<std::size_t>(i)] = 1;

  MomentumSgd opt(state.target_params, cfg.train.learning_rate, cfg.train.momentum);
  const Batches batches = epoch_batches(n, cfg, state.epoch);
  double kd = 0, forget = 0, discover = 0, div = 0, total = 0;
  for (int b = 0; b < batches.count(); ++b) {
    const auto rows = batches.rows(b);
    const Matrix xb = gather_rows(target_X, rows);
    const ModelParams& inference = from_source ? source_params : state.target_params;
    const Labels semantics = argmax_rows(classify(inference, encode(inference, xb)));
    std::vector<int> risk_rows;
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (at_risk[static_cast<std::size_t>(rows[r])]) risk_rows.push_back(static_cast<int>(r));

    const ForwardPass pass = forward(state.target_params, xb);
    const CalibrationObjective obj = calibration_objective(
        gather_rows(source_z, rows), pass, weights, semantics, risk_rows, lambda, cfg);
    fail_if_nonfinite(obj.total, "calibration", state.epoch, b, cfg.train.learning_rate);
    const ParamGrad grad = backward(state.target_params, pass, obj.grad_z,
                                    softmax_backward(pass.probs, obj.grad_probs));
    opt.step(state.target_params, grad, cfg.freeze_classifier);
    kd += obj.kd;
    forget += obj.forget;
    discover += obj.discover;
    div += obj.div;
    total += obj.total;
  }
  const int count = batches.count();
  push_means(state, "calibration",
             {{"kd", kd}, {"forget", forget}, {"discover", discover}, {"div", div},
              {"lambda", lambda * count}, {"total", total}},
             count);
  ++state.epoch;
  return state;
}

AdaptationState adaptation_epoch(AdaptationState state, const Matrix& target_X,
                                 const CafConfig& cfg) {
  const int n = static_cast<int>(target_X.rows());
  const int K = state.target_params.arch.num_classes;
  state.pseudo_labels = pseudo_label(state.target_params, target_X).labels;

  MomentumSgd opt(state.target_params, cfg.train.learning_rate, cfg.train.momentum);
  const Batches batches = epoch_batches(n, cfg, state.epoch);
  const std::uint64_t mix_seed =
      derive_seed(cfg.train.seed, "caf_mixup", static_cast<std::uint64_t>(state.epoch));
  double adapt = 0;
  for (int b = 0; b < batches.count(); ++b) {
    const auto rows = batches.rows(b);
    Matrix xb = gather_rows(target_X, rows);
    Matrix targets = one_hot(gather(state.pseudo_labels, rows), K);
    if (cfg.mixup_alpha > 0.0 && xb.rows() >= 2) {
      RngStream rng(mix_seed, "batch", static_cast<std::uint64_t>(b));
      MixedBatch mixed = mixup_batch(xb, targets, cfg.mixup_alpha, rng);
      xb = std::move(mixed.X);
      targets = std::move(mixed.targets);
    }
    const ForwardPass pass = forward(state.target_params, xb);
    const LossTerm loss = soft_cross_entropy(pass.probs, targets);
    fail_if_nonfinite(loss.value, "adaptation", state.epoch, b, cfg.train.learning_rate);
    const ParamGrad grad =
        backward(state.target_params, pass, Matrix(), softmax_backward(pass.probs, loss.grad));
    opt.step(state.target_params, grad, cfg.freeze_classifier);
    adapt += loss.value;
  }
  push_means(state, "adaptation", {{"adapt", adapt}, {"total", adapt}}, batches.count());
  ++state.epoch;
  return state;
}

AdaptationState run_caf(const ModelParams& source_params, const Matrix& target_X,
                        const CafConfig& cfg) {
  AdaptationState state = init_state(source_params, target_X, cfg);
  while (state.epoch < cfg.max_epochs) {
    if (state.epoch % 2 == 0)
      state = calibration_epoch(std::move(state), source_params, target_X, cfg);
    else
      state = adaptation_epoch(std::move(state), target_X, cfg);
  }
  return state;
}

std::string history_to_csv(const std::vector<HistoryEntry>& history) {
  std::ostringstream os;
  os << "epoch,phase,loss_name,value\n";
  for (const auto& h : history)
    os << h.epoch << "," << h.phase << "," << h.loss_name << "," << format_double(h.value) << "\n";
  return os.str();
}

}  // namespace utrcaf
