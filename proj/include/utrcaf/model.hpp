#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "utrcaf/rng.hpp"

namespace utrcaf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

// Floor applied inside every log of a probability.
inline constexpr double kLogFloor = 1e-12;

enum class Activation { relu, tanh };

struct ArchitectureSpec {
  int input_dim = 1;
  std::vector<int> hidden_dims{64};
  int bottleneck_dim = 32;
  int num_classes = 2;
  Activation activation = Activation::relu;

  // Throws ConfigError naming the violated field.
  void validate() const;
  bool operator==(const ArchitectureSpec&) const = default;
};

// One affine layer; weight is out×in so that y = W x + b.
struct Layer {
  Matrix weight;
  Vector bias;
};

// Encoder h (hidden layers with activation, linear bottleneck) followed by a
// weight-normalized linear classifier: row k of the effective weight is
// scale_k * direction_k / ||direction_k||.
struct ModelParams {
  ArchitectureSpec arch;
  std::vector<Layer> encoder;
  Matrix direction;  // K×d
  Vector scale;      // K

  // Shapes, finiteness and nonzero direction rows.
  void validate() const;
  std::size_t parameter_count() const;
};

// Same layout as ModelParams, used for gradients and optimizer state.
using ParamGrad = ModelParams;

ModelParams zeros_like(const ModelParams& params);
std::vector<double> flatten(const ModelParams& params);
ModelParams unflatten(const ModelParams& like, std::span<const double> values);

struct Dataset {
  Matrix features;  // n×p
  std::optional<Labels> labels;
  std::string name;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  bool labeled() const { return labels.has_value(); }
  // Throws InputError / LabelError.
  void validate(std::optional<int> num_classes = std::nullopt) const;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  int epochs = 30;
  double label_smoothing = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class NoiseMode { per_parameter, scalar };

// Seeded Kaiming-uniform initialization; classifier scale starts at ||direction_k||.
ModelParams init_params(const ArchitectureSpec& arch, std::uint64_t seed);

Matrix encode(const ModelParams& params, const Matrix& X);
Matrix classify(const ModelParams& params, const Matrix& Z);
Matrix softmax(const Matrix& logits);
// Mean label-smoothed cross entropy of probability rows.
double cross_entropy_ls(const Matrix& probs, const Labels& labels, double epsilon);

ModelParams perturb_params(const ModelParams& params, NoiseMode mode, double low, double high,
                           RngStream& rng);
// Multiplies every encoder entry by (1 + r).
ModelParams scale_encoder(const ModelParams& params, double r);

std::vector<int> argmax_rows(const Matrix& scores);
double accuracy(const std::vector<int>& predicted, const Labels& truth);

// Cached activations of one forward pass, needed for backpropagation.
struct ForwardPass {
  std::vector<Matrix> inputs;       // input to each encoder layer
  std::vector<Matrix> preactivity;  // W x + b for each encoder layer
  Matrix z;                         // encoder output
  Matrix logits;
  Matrix probs;
};

ForwardPass forward(const ModelParams& params, const Matrix& X);

// Backpropagates upstream gradients on z (may be empty) and on the logits
// (may be empty) to every parameter.
ParamGrad backward(const ModelParams& params, const ForwardPass& pass, const Matrix& grad_z,
                   const Matrix& grad_logits);

// Converts a gradient on softmax probabilities into one on the logits.
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs);

struct LossTerm {
  double value = 0.0;
  Matrix grad;  // gradient with respect to the loss input
};

// Cross entropy against arbitrary target distributions (one row per instance),
// gradient taken with respect to probs.
LossTerm soft_cross_entropy(const Matrix& probs, const Matrix& targets);
Matrix smoothed_targets(const Labels& labels, int num_classes, double epsilon);

class MomentumSgd {
 public:
  MomentumSgd(const ModelParams& like, double learning_rate, double momentum);
  // In-place update; classifier entries are left alone when freeze_classifier.
  void step(ModelParams& params, const ParamGrad& grad, bool freeze_classifier = false);

 private:
  ParamGrad velocity_;
  double learning_rate_;
  double momentum_;
};

// Seeded Fisher-Yates permutation of [0, n).
std::vector<int> shuffled_indices(int n, RngStream& rng);
Matrix gather_rows(const Matrix& X, std::span<const int> rows);
Labels gather(const Labels& labels, std::span<const int> rows);

ModelParams train_source(const Dataset& data, const ArchitectureSpec& arch,
                         const TrainConfig& cfg);

}  // namespace utrcaf
