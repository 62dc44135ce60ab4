#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "utrcaf/error.hpp"
#include "utrcaf/utr.hpp"

using namespace utrcaf;
using namespace utrcaf::testing;

namespace {

// h(x) = W x with no hidden layers and zero bias.
ModelParams linear_encoder(int p, int d, std::uint64_t seed) {
  ArchitectureSpec arch;
  arch.input_dim = p;
  arch.hidden_dims = {};
  arch.bottleneck_dim = d;
  arch.num_classes = 2;
  ModelParams m = init_params(arch, seed);
  m.encoder[0].bias.setZero();
  return m;
}

UtrSpectrum spectrum_of(std::initializer_list<std::initializer_list<double>> rows) {
  UtrSpectrum s;
  s.values.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) s.values(r, c++) = v;
    ++r;
  }
  return s;
}

UtrInstance instance_of(std::initializer_list<double> values) {
  UtrInstance u;
  u.values.resize(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) u.values(i++) = v;
  return u;
}

}  // namespace

TEST_CASE("channel_ud: zero perturbation gives a zero spectrum") {
  const ModelParams p = init_params(ArchitectureSpec{3, {8}, 4, 2, Activation::relu}, 1);
  RngStream rng(4, "x");
  PerturbationConfig cfg;
  cfg.low = cfg.high = 0.0;
  const UtrSpectrum s = channel_ud(p, random_matrix(10, 3, rng), cfg);
  CHECK(s.values.rows() == 10);
  CHECK(s.values.cols() == 4);
  CHECK(s.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("channel_ud: linear encoder under scalar noise matches the two-point variance") {
  const ModelParams p = linear_encoder(3, 5, 17);
  RngStream rng(8, "x");
  const Matrix X = random_matrix(7, 3, rng);
  const Matrix WX = X * p.encoder[0].weight.transpose();

  SUBCASE("forced draws") {
    const double r1 = 0.031, r2 = -0.044;
    const UtrSpectrum s = spectrum_from_models({scale_encoder(p, r1), scale_encoder(p, r2)}, X);
    const Matrix expected = std::pow((r1 - r2) / 2.0, 2) * WX.cwiseAbs2();
    CHECK((s.values - expected).cwiseAbs().maxCoeff() <= 1e-9);
  }
  SUBCASE("seeded draws, recovered from the perturbed weights") {
    PerturbationConfig cfg;
    cfg.noise_mode = NoiseMode::scalar;
    cfg.seed = 123;
    const auto models = draw_perturbed_models(p, cfg);
    const double r1 = models[0].encoder[0].weight(0, 0) / p.encoder[0].weight(0, 0) - 1.0;
    const double r2 = models[1].encoder[0].weight(0, 0) / p.encoder[0].weight(0, 0) - 1.0;
    CHECK(std::abs(r1) <= 0.05);
    CHECK(r1 != r2);
    const Matrix expected = std::pow((r1 - r2) / 2.0, 2) * WX.cwiseAbs2();
    CHECK((channel_ud(p, X, cfg).values - expected).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("channel_ud: identical rows and row permutations") {
  const ModelParams p = init_params(ArchitectureSpec{4, {6}, 5, 3, Activation::tanh}, 2);
  RngStream rng(6, "x");
  Matrix X = random_matrix(9, 4, rng);
  X.row(5) = X.row(1);
  PerturbationConfig cfg;
  cfg.seed = 41;
  const UtrSpectrum s = channel_ud(p, X, cfg);
  CHECK(s.values.row(5) == s.values.row(1));
  CHECK(s.values.minCoeff() >= 0.0);
  CHECK(s.values.maxCoeff() > 0.0);

  const std::vector<int> perm{3, 0, 8, 1, 7, 2, 6, 4, 5};
  const UtrSpectrum sp = channel_ud(p, gather_rows(X, perm), cfg);
  for (std::size_t i = 0; i < perm.size(); ++i)
    CHECK(sp.values.row(static_cast<Eigen::Index>(i)) == s.values.row(perm[i]));
}

TEST_CASE("channel_ud: fewer than two perturbations is a config error") {
  const ModelParams p = linear_encoder(2, 2, 1);
  PerturbationConfig cfg;
  cfg.T = 1;
  CHECK_THROWS_AS(channel_ud(p, Matrix::Ones(2, 2), cfg), ConfigError);
}

TEST_CASE("utr_domain") {
  const UtrDomain d = utr_domain(spectrum_of({{0, 2}, {4, 0}}));
  CHECK(d.values(0) == 2.0);
  CHECK(d.values(1) == 1.0);

  const UtrSpectrum same = spectrum_of({{1, 5, 2}, {1, 5, 2}, {1, 5, 2}});
  CHECK(utr_domain(same).values == same.values.row(0).transpose());
  const UtrSpectrum single = spectrum_of({{3, 7}});
  CHECK(utr_domain(single).values == single.values.row(0).transpose());

  UtrSpectrum empty;
  empty.values.resize(0, 3);
  CHECK_THROWS_AS(utr_domain(empty), InputError);
}

TEST_CASE("utr_domain_online") {
  const UtrSpectrum batch = spectrum_of({{5, 10}, {15, 30}});
  CHECK(utr_domain_online(std::nullopt, batch, 0.1).values == utr_domain(batch).values);
  CHECK(utr_domain_online(UtrDomain{Vector::Zero(2)}, batch, 1.0).values ==
        utr_domain(batch).values);

  const UtrDomain moved = utr_domain_online(UtrDomain{Vector::Zero(2)}, batch, 0.1);
  CHECK(moved.values(0) == doctest::Approx(1.0));
  CHECK(moved.values(1) == doctest::Approx(2.0));

  const UtrDomain fixed =
      utr_domain_online(UtrDomain{Vector::Ones(2)}, spectrum_of({{1, 1}}), 0.1);
  CHECK(fixed.values(0) == doctest::Approx(1.0));

  CHECK_THROWS_AS(utr_domain_online(std::nullopt, batch, 0.0), ConfigError);
  CHECK_THROWS_AS(utr_domain_online(std::nullopt, batch, 1.5), ConfigError);
}

TEST_CASE("utr_instance") {
  CHECK(utr_instance(spectrum_of({{1, 3}})).values(0) == 2.0);
  CHECK(utr_instance(spectrum_of({{0, 0}, {0, 0}})).values.cwiseAbs().maxCoeff() == 0.0);
  const UtrSpectrum col = spectrum_of({{4}, {9}});
  CHECK(utr_instance(col).values == col.values.col(0));
}

TEST_CASE("select_risk") {
  using Mode = RiskThreshold::Mode;
  CHECK(select_risk(instance_of({1, 1, 10}), {Mode::mean_multiple, 2.0}) == std::vector<int>{2});
  CHECK(select_risk(instance_of({2, 2, 2}), {Mode::mean_multiple, 1.0}).empty());
  CHECK(select_risk(instance_of({0.1, 3, 2}), {Mode::absolute, 0.0}) ==
        std::vector<int>{0, 1, 2});
  CHECK(select_risk(instance_of({0.1, 3, 2}), {Mode::absolute, 2.0}) == std::vector<int>{1});
}

TEST_CASE("select_risk: raising the threshold never adds indices") {
  RngStream rng(12, "mono");
  for (int trial = 0; trial < 20; ++trial) {
    UtrInstance u{random_matrix(30, 1, rng).cwiseAbs().col(0)};
    std::vector<int> prev = select_risk(u, {RiskThreshold::Mode::mean_multiple, 0.05});
    for (double v = 0.1; v < 4.0; v += 0.25) {
      const auto cur = select_risk(u, {RiskThreshold::Mode::mean_multiple, v});
      CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
      prev = cur;
    }
  }
}

TEST_CASE("select_risk is scale-free for a zero-bias linear encoder") {
  const ModelParams p = linear_encoder(4, 6, 3);
  RngStream rng(31, "x");
  const Matrix X = random_matrix(40, 4, rng);
  PerturbationConfig cfg;
  cfg.seed = 5;
  const RiskThreshold thr{RiskThreshold::Mode::mean_multiple, 1.5};
  const auto base = select_risk(utr_instance(channel_ud(p, X, cfg)), thr);
  CHECK_FALSE(base.empty());
  for (double c : {0.5, 3.0, 100.0})
    CHECK(select_risk(utr_instance(channel_ud(p, c * X, cfg)), thr) == base);
}

TEST_CASE("aggregation properties") {
  RngStream rng(77, "agg");
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.index(12));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.index(9));
    UtrSpectrum s{random_matrix(n, d, rng).cwiseAbs2(), "rand"};
    CHECK(std::abs(utr_instance(s).values.mean() - utr_domain(s).values.mean()) <= 1e-9);

    UtrSpectrum doubled;
    doubled.values.resize(2 * n, d);
    doubled.values << s.values, s.values;
    CHECK((utr_domain(doubled).values - utr_domain(s).values).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("spectrum and vector CSV round trip exactly") {
  RngStream rng(3, "csv");
  UtrSpectrum s{random_matrix(5, 3, rng).cwiseAbs2(), ""};
  const std::string text = spectrum_to_csv(s);
  CHECK(text.rfind("instance,ch0,ch1,ch2\n", 0) == 0);
  CHECK(spectrum_from_csv(text).values == s.values);

  const Vector v = s.values.col(1);
  CHECK(vector_to_csv(v).rfind("value\n", 0) == 0);
  CHECK(vector_from_csv(vector_to_csv(v)) == v);
}
