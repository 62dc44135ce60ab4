#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "test_support.hpp"
#include "utrcaf/checkpoint.hpp"
#include "utrcaf/error.hpp"
#include "utrcaf/model.hpp"

using namespace utrcaf;
using namespace utrcaf::testing;

namespace {

ModelParams identity_model() {
  ArchitectureSpec arch;
  arch.input_dim = 2;
  arch.hidden_dims = {};
  arch.bottleneck_dim = 2;
  arch.num_classes = 2;
  ModelParams p;
  p.arch = arch;
  p.encoder.push_back({Matrix::Identity(2, 2), Vector::Zero(2)});
  p.direction = Matrix::Identity(2, 2);
  p.scale = Vector::Ones(2);
  return p;
}

ArchitectureSpec three_layer_arch() {
  ArchitectureSpec arch;
  arch.input_dim = 3;
  arch.hidden_dims = {5, 4};
  arch.bottleneck_dim = 3;
  arch.num_classes = 3;
  return arch;
}

Dataset two_blobs(int n, std::uint64_t seed) {
  RngStream rng(seed, "blobs");
  Dataset ds;
  ds.name = "blobs";
  ds.features.resize(n, 2);
  Labels y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    const double cx = c == 0 ? -3.0 : 3.0;
    ds.features(i, 0) = rng.normal(cx, 0.5);
    ds.features(i, 1) = rng.normal(c == 0 ? -1.0 : 1.0, 0.5);
    y[static_cast<std::size_t>(i)] = c;
  }
  ds.labels = y;
  return ds;
}

}  // namespace

TEST_CASE("encode: identity layer passes inputs through") {
  const ModelParams p = identity_model();
  Matrix x(1, 2);
  x << 1.0, 2.0;
  const Matrix z = encode(p, x);
  CHECK(z(0, 0) == 1.0);
  CHECK(z(0, 1) == 2.0);
}

TEST_CASE("encode: identical rows map to identical outputs and recomputation is bitwise equal") {
  const ModelParams p = init_params(three_layer_arch(), 11);
  RngStream rng(3, "x");
  Matrix x = random_matrix(4, 3, rng);
  x.row(2) = x.row(0);
  const Matrix z1 = encode(p, x);
  const Matrix z2 = encode(p, x);
  CHECK(z1.row(0) == z1.row(2));
  CHECK(std::memcmp(z1.data(), z2.data(), sizeof(double) * z1.size()) == 0);
  CHECK(forward(p, x).z == z1);
}

TEST_CASE("encode: wrong input width is a dimension error") {
  const ModelParams p = identity_model();
  CHECK_THROWS_AS(encode(p, Matrix::Zero(1, 3)), DimensionError);
}

TEST_CASE("classify: weight normalization") {
  ModelParams p = identity_model();
  p.scale << 2.0, 3.0;
  Matrix z(1, 2);
  z << 1.0, 1.0;
  const Matrix logits = classify(p, z);
  CHECK(logits(0, 0) == doctest::Approx(2.0));
  CHECK(logits(0, 1) == doctest::Approx(3.0));

  SUBCASE("direction rescaling is invisible") {
    RngStream rng(5, "cls");
    ModelParams q = init_params(three_layer_arch(), 4);
    const Matrix zz = random_matrix(6, 3, rng);
    const Matrix before = classify(q, zz);
    q.direction *= 7.0;
    q.direction.row(1) *= 0.25;
    CHECK((classify(q, zz) - before).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("zero scale gives zero logits") {
    p.scale.setZero();
    CHECK(classify(p, z).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero-norm direction is rejected") {
    p.direction.row(1).setZero();
    CHECK_THROWS_AS(classify(p, z), ParameterError);
  }
}

TEST_CASE("softmax") {
  Matrix zeros = Matrix::Zero(1, 4);
  CHECK(softmax(zeros)(0, 2) == doctest::Approx(0.25));

  Matrix two(1, 2);
  two << std::log(1.0), std::log(3.0);
  const Matrix p = softmax(two);
  CHECK(p(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  RngStream rng(9, "softmax");
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix logits = random_matrix(5, 4, rng, 10.0);
    const Matrix probs = softmax(logits);
    Matrix shifted = logits;
    for (Eigen::Index i = 0; i < shifted.rows(); ++i) shifted.row(i).array() += rng.normal(0, 50);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      CHECK(std::abs(probs.row(i).sum() - 1.0) <= 1e-9);
      CHECK(probs.row(i).minCoeff() >= 0.0);
    }
    CHECK((softmax(shifted) - probs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cross_entropy_ls") {
  Matrix onehot(1, 3);
  onehot << 0.0, 1.0, 0.0;
  CHECK(cross_entropy_ls(onehot, {1}, 0.0) == 0.0);

  Matrix p(1, 2);
  p << 0.9, 0.1;
  // -(0.95 ln 0.9 + 0.05 ln 0.1)
  const double expected = -(0.95 * std::log(0.9) + 0.05 * std::log(0.1));
  CHECK(expected == doctest::Approx(0.21522).epsilon(1e-4));
  CHECK(cross_entropy_ls(p, {0}, 0.1) == doctest::Approx(expected).epsilon(1e-12));

  const Matrix uniform = Matrix::Constant(3, 4, 0.25);
  CHECK(cross_entropy_ls(uniform, {0, 3, 2}, 0.0) == doctest::Approx(std::log(4.0)));

  CHECK_THROWS_AS(cross_entropy_ls(uniform, {0, 4, 2}, 0.0), LabelError);
  CHECK_THROWS_AS(cross_entropy_ls(uniform, {0, -1, 2}, 0.0), LabelError);
}

TEST_CASE("perturb_params") {
  const ModelParams p = init_params(three_layer_arch(), 21);

  SUBCASE("zero range is the identity") {
    RngStream rng(1, "perturb");
    CHECK(bitwise_equal(perturb_params(p, NoiseMode::per_parameter, 0.0, 0.0, rng), p));
    CHECK(bitwise_equal(perturb_params(p, NoiseMode::scalar, 0.0, 0.0, rng), p));
  }
  SUBCASE("scalar mode multiplies by 1 + r") {
    ModelParams q = identity_model();
    q.encoder[0].weight(0, 0) = 2.0;
    RngStream rng(1, "perturb");
    const ModelParams out = perturb_params(q, NoiseMode::scalar, 0.1, 0.1, rng);
    CHECK(out.encoder[0].weight(0, 0) == doctest::Approx(2.2));
    CHECK(q.encoder[0].weight(0, 0) == 2.0);
  }
  SUBCASE("per-parameter mode is seed-deterministic and leaves the classifier alone") {
    RngStream a(77, "perturb"), b(77, "perturb");
    const ModelParams x = perturb_params(p, NoiseMode::per_parameter, -0.05, 0.05, a);
    const ModelParams y = perturb_params(p, NoiseMode::per_parameter, -0.05, 0.05, b);
    CHECK(bitwise_equal(x, y));
    CHECK(x.direction == p.direction);
    CHECK(x.scale == p.scale);
    CHECK_FALSE(x.encoder[0].weight == p.encoder[0].weight);
    const Matrix ratio = x.encoder[1].weight.cwiseQuotient(p.encoder[1].weight);
    CHECK(ratio.maxCoeff() <= 1.05 + 1e-12);
    CHECK(ratio.minCoeff() >= 0.95 - 1e-12);
  }
  SUBCASE("inverted range is rejected") {
    RngStream rng(1, "perturb");
    CHECK_THROWS_AS(perturb_params(p, NoiseMode::scalar, 0.1, -0.1, rng), ConfigError);
  }
}

TEST_CASE("train_source: separable blobs") {
  const Dataset ds = two_blobs(200, 8);
  // Oracle: the perpendicular bisector of the class means separates every point.
  Eigen::RowVector2d m0 = Eigen::RowVector2d::Zero(), m1 = Eigen::RowVector2d::Zero();
  for (int i = 0; i < ds.size(); ++i) ((*ds.labels)[i] ? m1 : m0) += ds.features.row(i) / 100.0;
  const Eigen::RowVector2d w = m1 - m0;
  const double b = -0.5 * (m1.squaredNorm() - m0.squaredNorm());
  for (int i = 0; i < ds.size(); ++i)
    REQUIRE((ds.features.row(i).dot(w) + b > 0) == ((*ds.labels)[i] == 1));

  ArchitectureSpec arch;
  arch.input_dim = 2;
  arch.hidden_dims = {16};
  arch.bottleneck_dim = 4;
  arch.num_classes = 2;
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 32;
  cfg.seed = 3;
  const ModelParams p = train_source(ds, arch, cfg);
  const auto pred = argmax_rows(classify(p, encode(p, ds.features)));
  CHECK(accuracy(pred, *ds.labels) >= 0.99);

  SUBCASE("same inputs give bitwise-identical parameters") {
    CHECK(bitwise_equal(train_source(ds, arch, cfg), p));
  }
  SUBCASE("zero epochs returns the seeded initialization") {
    TrainConfig none = cfg;
    none.epochs = 0;
    CHECK(bitwise_equal(train_source(ds, arch, none), init_params(arch, cfg.seed)));
  }
  SUBCASE("diverging learning rate is reported") {
    TrainConfig wild = cfg;
    wild.learning_rate = 1e200;
    wild.momentum = 0.0;
    CHECK_THROWS_AS(train_source(ds, arch, wild), DivergenceError);
  }
  SUBCASE("unlabeled data is rejected") {
    Dataset unlabeled = ds;
    unlabeled.labels.reset();
    CHECK_THROWS_AS(train_source(unlabeled, arch, cfg), InputError);
  }
}

TEST_CASE("cross entropy gradient matches finite differences") {
  RngStream rng(2024, "ce-grad");
  for (int trial = 0; trial < 20; ++trial) {
    const ArchitectureSpec arch =
        small_arch(rng, trial % 2 ? Activation::relu : Activation::tanh);
    const ModelParams p = init_params(arch, 100 + static_cast<std::uint64_t>(trial));
    const int n = 2 + static_cast<int>(rng.index(7));
    const Matrix X = random_matrix(n, arch.input_dim, rng);
    const Labels y = random_labels(n, arch.num_classes, rng);
    auto loss = [&](const ModelParams& q) { return cross_entropy_ls(forward(q, X).probs, y, 0.1); };
    const ForwardPass pass = forward(p, X);
    const LossTerm ce =
        soft_cross_entropy(pass.probs, smoothed_targets(y, arch.num_classes, 0.1));
    CHECK(ce.value == doctest::Approx(loss(p)).epsilon(1e-12));
    const ParamGrad g = backward(p, pass, Matrix(), softmax_backward(pass.probs, ce.grad));
    CHECK(relative_error(flatten(g), numeric_gradient(p, loss)) <= 1e-4);
  }
}

TEST_CASE("MomentumSgd respects a frozen classifier") {
  ModelParams p = init_params(three_layer_arch(), 5);
  const ModelParams before = p;
  ParamGrad g = zeros_like(p);
  for (auto& v : g.encoder) v.weight.setOnes();
  g.direction.setOnes();
  g.scale.setOnes();
  MomentumSgd opt(p, 0.1, 0.9);
  opt.step(p, g, true);
  CHECK(p.direction == before.direction);
  CHECK(p.scale == before.scale);
  CHECK_FALSE(p.encoder[0].weight == before.encoder[0].weight);
}

TEST_CASE("checkpoint round-trips every bit") {
  const ModelParams p = init_params(three_layer_arch(), 99);
  const auto path = std::filesystem::temp_directory_path() / "utrcaf_test_ckpt.json";
  save_checkpoint(p, path);
  const ModelParams q = load_checkpoint(path);
  CHECK(q.arch == p.arch);
  CHECK(bitwise_equal(p, q));
  std::filesystem::remove(path);

  auto j = params_to_json(p);
  j["extra"] = 1;
  CHECK_THROWS_AS(params_from_json(j), ConfigError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.json"), InputError);
}

TEST_CASE("flatten/unflatten are inverse") {
  const ModelParams p = init_params(three_layer_arch(), 7);
  const auto flat = flatten(p);
  CHECK(flat.size() == p.parameter_count());
  CHECK(bitwise_equal(unflatten(p, flat), p));
}
