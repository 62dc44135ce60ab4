#include "utrcaf/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "utrcaf/error.hpp"

namespace utrcaf {
namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Matrix activate(const Matrix& pre, Activation act) {
  if (act == Activation::relu) return pre.cwiseMax(0.0);
  return pre.array().tanh().matrix();
}

Matrix activation_derivative(const Matrix& pre, Activation act) {
  if (act == Activation::relu) return (pre.array() > 0.0).cast<double>().matrix();
  const Eigen::ArrayXXd t = pre.array().tanh();
  return (1.0 - t * t).matrix();
}

Matrix effective_classifier(const ModelParams& params) {
  const Eigen::Index K = params.direction.rows();
  Matrix W(K, params.direction.cols());
  for (Eigen::Index k = 0; k < K; ++k) {
    const double norm = params.direction.row(k).norm();
    if (!(norm > 0.0)) {
      throw ParameterError("classifier direction row " + std::to_string(k) + " has zero norm");
    }
    W.row(k) = params.direction.row(k) * (params.scale(k) / norm);
  }
  return W;
}

template <typename Fn>
void for_each_block(ModelParams& p, Fn&& fn) {
  for (auto& layer : p.encoder) {
    fn(layer.weight);
    fn(layer.bias);
  }
  fn(p.direction);
  fn(p.scale);
}

template <typename Fn>
void for_each_block(const ModelParams& p, Fn&& fn) {
  for (const auto& layer : p.encoder) {
    fn(layer.weight);
    fn(layer.bias);
  }
  fn(p.direction);
  fn(p.scale);
}

// Row-major walk over a dense block so flattened order matches the checkpoint layout.
template <typename Derived, typename Fn>
void for_each_entry(Eigen::DenseBase<Derived>& block, Fn&& fn) {
  for (Eigen::Index r = 0; r < block.rows(); ++r)
    for (Eigen::Index c = 0; c < block.cols(); ++c) fn(block(r, c));
}

}  // namespace

void ArchitectureSpec::validate() const {
  if (input_dim < 1) throw ConfigError("arch.input_dim must be >= 1");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("arch.hidden_dims entries must be >= 1");
  if (bottleneck_dim < 2) throw ConfigError("arch.bottleneck_dim must be >= 2");
  if (num_classes < 2) throw ConfigError("arch.num_classes must be >= 2");
}

void ModelParams::validate() const {
  arch.validate();
  std::vector<int> dims{arch.input_dim};
  dims.insert(dims.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
  dims.push_back(arch.bottleneck_dim);
  if (encoder.size() + 1 != dims.size())
    throw ParameterError("encoder has " + std::to_string(encoder.size()) + " layers, expected " +
                         std::to_string(dims.size() - 1));
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const auto& layer = encoder[l];
    if (layer.weight.rows() != dims[l + 1] || layer.weight.cols() != dims[l] ||
        layer.bias.size() != dims[l + 1])
      throw ParameterError("encoder layer " + std::to_string(l) + " has shape " +
                           shape(layer.weight));
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
      throw ParameterError("encoder layer " + std::to_string(l) + " has non-finite entries");
  }
  if (direction.rows() != arch.num_classes || direction.cols() != arch.bottleneck_dim ||
      scale.size() != arch.num_classes)
    throw ParameterError("classifier shape " + shape(direction) + " inconsistent with arch");
  if (!direction.allFinite() || !scale.allFinite())
    throw ParameterError("classifier has non-finite entries");
  for (Eigen::Index k = 0; k < direction.rows(); ++k)
    if (!(direction.row(k).norm() > 0.0))
      throw ParameterError("classifier direction row " + std::to_string(k) + " has zero norm");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each_block(*this, [&](const auto& b) { n += static_cast<std::size_t>(b.size()); });
  return n;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for_each_block(z, [](auto& b) { b.setZero(); });
  return z;
}

std::vector<double> flatten(const ModelParams& params) {
  std::vector<double> out;
  out.reserve(params.parameter_count());
  ModelParams copy = params;
  for_each_block(copy, [&](auto& b) { for_each_entry(b, [&](double& v) { out.push_back(v); }); });
  return out;
}

ModelParams unflatten(const ModelParams& like, std::span<const double> values) {
  if (values.size() != like.parameter_count())
    throw DimensionError("flat parameter vector has " + std::to_string(values.size()) +
                         " entries, expected " + std::to_string(like.parameter_count()));
  ModelParams out = like;
  std::size_t i = 0;
  for_each_block(out, [&](auto& b) { for_each_entry(b, [&](double& v) { v = values[i++]; }); });
  return out;
}

void Dataset::validate(std::optional<int> num_classes) const {
  if (features.rows() < 1) throw InputError("dataset '" + name + "' is empty");
  if (!features.allFinite()) throw InputError("dataset '" + name + "' has non-finite features");
  if (labels) {
    if (static_cast<Eigen::Index>(labels->size()) != features.rows())
      throw DimensionError("dataset '" + name + "' has " + std::to_string(labels->size()) +
                           " labels for " + std::to_string(features.rows()) + " rows");
    for (int y : *labels)
      if (y < 0 || (num_classes && y >= *num_classes))
        throw LabelError("dataset '" + name + "' has label " + std::to_string(y) +
                         " outside [0, K)");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0,1)");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw ConfigError("train.label_smoothing must be in [0,1)");
}

ModelParams init_params(const ArchitectureSpec& arch, std::uint64_t seed) {
  arch.validate();
  RngStream rng(seed, "init");
  ModelParams p;
  p.arch = arch;
  std::vector<int> dims{arch.input_dim};
  dims.insert(dims.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
  dims.push_back(arch.bottleneck_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const double wb = std::sqrt(6.0 / fan_in);
    const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Layer layer{Matrix(dims[l + 1], fan_in), Vector(dims[l + 1])};
    for_each_entry(layer.weight, [&](double& v) { v = rng.uniform(-wb, wb); });
    for_each_entry(layer.bias, [&](double& v) { v = rng.uniform(-bb, bb); });
    p.encoder.push_back(std::move(layer));
  }
  const double cb = std::sqrt(6.0 / arch.bottleneck_dim);
  p.direction.resize(arch.num_classes, arch.bottleneck_dim);
  for_each_entry(p.direction, [&](double& v) { v = rng.uniform(-cb, cb); });
  p.scale = p.direction.rowwise().norm();
  return p;
}

ForwardPass forward(const ModelParams& params, const Matrix& X) {
  if (X.cols() != params.arch.input_dim)
    throw DimensionError("input has " + std::to_string(X.cols()) + " columns, model expects " +
                         std::to_string(params.arch.input_dim));
  ForwardPass pass;
  Matrix h = X;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const auto& layer = params.encoder[l];
    Matrix pre = h * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    pass.inputs.push_back(std::move(h));
    const bool last = l + 1 == params.encoder.size();
    h = last ? pre : activate(pre, params.arch.activation);
    pass.preactivity.push_back(std::move(pre));
  }
  pass.z = std::move(h);
  pass.logits = pass.z * effective_classifier(params).transpose();
  pass.probs = softmax(pass.logits);
  return pass;
}

Matrix encode(const ModelParams& params, const Matrix& X) {
  if (X.cols() != params.arch.input_dim)
    throw DimensionError("input has " + std::to_string(X.cols()) + " columns, model expects " +
                         std::to_string(params.arch.input_dim));
  Matrix h = X;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const auto& layer = params.encoder[l];
    Matrix pre = h * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    h = (l + 1 == params.encoder.size()) ? pre : activate(pre, params.arch.activation);
  }
  return h;
}

Matrix classify(const ModelParams& params, const Matrix& Z) {
  if (Z.cols() != params.direction.cols())
    throw DimensionError("features have " + std::to_string(Z.cols()) +
                         " channels, classifier expects " +
                         std::to_string(params.direction.cols()));
  return Z * effective_classifier(params).transpose();
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix smoothed_targets(const Labels& labels, int num_classes, double epsilon) {
  Matrix t = Matrix::Constant(static_cast<Eigen::Index>(labels.size()), num_classes,
                              epsilon / num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes)
      throw LabelError("label " + std::to_string(y) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    t(static_cast<Eigen::Index>(i), y) += 1.0 - epsilon;
  }
  return t;
}

LossTerm soft_cross_entropy(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
    throw DimensionError("probs " + shape(probs) + " vs targets " + shape(targets));
  const double n = static_cast<double>(probs.rows());
  LossTerm out{0.0, Matrix::Zero(probs.rows(), probs.cols())};
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double t = targets(i, k);
      if (t == 0.0) continue;
      const double p = probs(i, k);
      out.value -= t * std::log(std::clamp(p, kLogFloor, 1.0));
      if (p > kLogFloor) out.grad(i, k) = -t / (p * n);
    }
  }
  out.value /= n;
  return out;
}

double cross_entropy_ls(const Matrix& probs, const Labels& labels, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0))
    throw ConfigError("label smoothing epsilon must be in [0,1)");
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
    throw DimensionError("labels length " + std::to_string(labels.size()) + " vs " +
                         std::to_string(probs.rows()) + " rows");
  const int K = static_cast<int>(probs.cols());
  return soft_cross_entropy(probs, smoothed_targets(labels, K, epsilon)).value;
}

ModelParams perturb_params(const ModelParams& params, NoiseMode mode, double low, double high,
                           RngStream& rng) {
  if (low > high) throw ConfigError("perturbation low must not exceed high");
  if (mode == NoiseMode::scalar) return scale_encoder(params, rng.uniform(low, high));
  ModelParams out = params;
  for (auto& layer : out.encoder) {
    for_each_entry(layer.weight, [&](double& v) { v *= 1.0 + rng.uniform(low, high); });
    for_each_entry(layer.bias, [&](double& v) { v *= 1.0 + rng.uniform(low, high); });
  }
  return out;
}

ModelParams scale_encoder(const ModelParams& params, double r) {
  ModelParams out = params;
  for (auto& layer : out.encoder) {
    layer.weight *= 1.0 + r;
    layer.bias *= 1.0 + r;
  }
  return out;
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < scores.cols(); ++k)
      if (scores(i, k) > scores(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const Labels& truth) {
  if (predicted.size() != truth.size())
    throw DimensionError("prediction/label length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  const Vector inner = (probs.array() * grad_probs.array()).rowwise().sum();
  Matrix out = grad_probs;
  out.colwise() -= inner;
  return (out.array() * probs.array()).matrix();
}

ParamGrad backward(const ModelParams& params, const ForwardPass& pass, const Matrix& grad_z,
                   const Matrix& grad_logits) {
  ParamGrad g = zeros_like(params);
  Matrix dz = grad_z.size() ? grad_z : Matrix::Zero(pass.z.rows(), pass.z.cols());

  if (grad_logits.size()) {
    const Matrix W = effective_classifier(params);
    const Matrix dW = grad_logits.transpose() * pass.z;
    dz += grad_logits * W;
    for (Eigen::Index k = 0; k < W.rows(); ++k) {
      const double norm = params.direction.row(k).norm();
      const Eigen::RowVectorXd u = params.direction.row(k) / norm;
      const double along = dW.row(k).dot(u);
      g.scale(k) = along;
      g.direction.row(k) = (params.scale(k) / norm) * (dW.row(k) - along * u);
    }
  }

  Matrix delta = std::move(dz);
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    g.encoder[l].weight = delta.transpose() * pass.inputs[l];
    g.encoder[l].bias = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix upstream = delta * params.encoder[l].weight;
    delta = (upstream.array() *
             activation_derivative(pass.preactivity[l - 1], params.arch.activation).array())
                .matrix();
  }
  return g;
}

MomentumSgd::MomentumSgd(const ModelParams& like, double learning_rate, double momentum)
    : velocity_(zeros_like(like)), learning_rate_(learning_rate), momentum_(momentum) {}

void MomentumSgd::step(ModelParams& params, const ParamGrad& grad, bool freeze_classifier) {
  auto update = [&](auto& theta, auto& vel, const auto& g) {
    vel = momentum_ * vel + g;
    theta -= learning_rate_ * vel;
  };
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    update(params.encoder[l].weight, velocity_.encoder[l].weight, grad.encoder[l].weight);
    update(params.encoder[l].bias, velocity_.encoder[l].bias, grad.encoder[l].bias);
  }
  if (freeze_classifier) return;
  update(params.direction, velocity_.direction, grad.direction);
  update(params.scale, velocity_.scale, grad.scale);
}

std::vector<int> shuffled_indices(int n, RngStream& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.index(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

Matrix gather_rows(const Matrix& X, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  return out;
}

Labels gather(const Labels& labels, std::span<const int> rows) {
  Labels out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(labels[static_cast<std::size_t>(r)]);
  return out;
}

ModelParams train_source(const Dataset& data, const ArchitectureSpec& arch,
                         const TrainConfig& cfg) {
  arch.validate();
  cfg.validate();
  if (!data.labeled()) throw InputError("source dataset '" + data.name + "' has no labels");
  data.validate(arch.num_classes);
  if (data.dim() != arch.input_dim)
    throw DimensionError("dataset has " + std::to_string(data.dim()) +
                         " features, arch.input_dim is " + std::to_string(arch.input_dim));

  ModelParams params = init_params(arch, cfg.seed);
  MomentumSgd opt(params, cfg.learning_rate, cfg.momentum);
  const int n = data.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream rng(cfg.seed, "source_shuffle", static_cast<std::uint64_t>(epoch));
    const auto order = shuffled_indices(n, rng);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      std::span<const int> rows(order.data() + start, static_cast<std::size_t>(stop - start));
      const Matrix xb = gather_rows(data.features, rows);
      const Labels yb = gather(*data.labels, rows);
      const ForwardPass pass = forward(params, xb);
      const LossTerm loss = soft_cross_entropy(
          pass.probs, smoothed_targets(yb, arch.num_classes, cfg.label_smoothing));
      if (!std::isfinite(loss.value)) {
        std::ostringstream os;
        os << "source training diverged at epoch " << epoch << " (learning_rate "
           << cfg.learning_rate << ")";
        throw DivergenceError(os.str());
      }
      const ParamGrad grad =
          backward(params, pass, Matrix(), softmax_backward(pass.probs, loss.grad));
      opt.step(params, grad);
    }
  }
  return params;
}

}  // namespace utrcaf
