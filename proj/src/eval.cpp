#include "utrcaf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "utrcaf/error.hpp"
#include "utrcaf/io.hpp"

namespace utrcaf {
namespace {

double clamped_log(double p) { return std::log(std::clamp(p, kLogFloor, 1.0)); }

void require_same_width(const Matrix& A, const Matrix& B, const char* what) {
  if (A.rows() < 1 || B.rows() < 1) throw InputError(std::string(what) + ": empty input");
  if (A.cols() != B.cols())
    throw DimensionError(std::string(what) + ": inputs have " + std::to_string(A.cols()) +
                         " and " + std::to_string(B.cols()) + " columns");
}

Matrix stack(const Matrix& A, const Matrix& B) {
  Matrix out(A.rows() + B.rows(), A.cols());
  out << A, B;
  return out;
}

const Labels& labels_of(const Dataset& data, const char* what) {
  if (!data.labeled())
    throw InputError(std::string(what) + " needs labels, dataset '" + data.name + "' has none");
  return *data.labels;
}

Matrix masked_features(const ModelParams& params, const Matrix& X, const std::vector<int>& keep) {
  const Matrix z = encode(params, X);
  Matrix out = Matrix::Zero(z.rows(), z.cols());
  for (int c : keep) {
    if (c < 0 || c >= z.cols())
      throw IndexError("channel " + std::to_string(c) + " outside [0, " + std::to_string(z.cols()) +
                       ")");
    out.col(c) = z.col(c);
  }
  return out;
}

struct LogisticModel {
  Vector w;
  double b = 0.0;
};

LogisticModel fit_logistic(const Matrix& X, const Vector& y, int epochs, double lr) {
  LogisticModel m{Vector::Zero(X.cols()), 0.0};
  const double n = static_cast<double>(X.rows());
  for (int e = 0; e < epochs; ++e) {
    const Vector logits = (X * m.w).array() + m.b;
    const Vector p = logits.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
    const Vector r = p - y;
    m.w -= lr * (X.transpose() * r) / n;
    m.b -= lr * r.sum() / n;
  }
  return m;
}

}  // namespace

ChannelSplit split_channels(const UtrDomain& utr_d, int m) {
  const int d = static_cast<int>(utr_d.values.size());
  if (m < 1 || m >= d)
    throw ConfigError("eval.split_m must be in [1, " + std::to_string(d - 1) + "], got " +
                      std::to_string(m));
  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return utr_d.values(a) < utr_d.values(b); });
  ChannelSplit split;
  split.low_idx.assign(order.begin(), order.begin() + m);
  split.high_idx.assign(order.begin() + m, order.end());
  std::sort(split.low_idx.begin(), split.low_idx.end());
  std::sort(split.high_idx.begin(), split.high_idx.end());
  return split;
}

Matrix select_columns(const Matrix& M, const std::vector<int>& cols) {
  Matrix out(M.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= M.cols())
      throw IndexError("column " + std::to_string(cols[j]) + " outside [0, " +
                       std::to_string(M.cols()) + ")");
    out.col(static_cast<Eigen::Index>(j)) = M.col(cols[j]);
  }
  return out;
}

double masked_accuracy(const ModelParams& params, const Dataset& data,
                       const std::vector<int>& keep_idx) {
  const Labels& y = labels_of(data, "masked_accuracy");
  const Matrix z = masked_features(params, data.features, keep_idx);
  return accuracy(argmax_rows(classify(params, z)), y);
}

double median_pairwise_distance(const Matrix& pooled) {
  std::vector<double> dist;
  const Eigen::Index n = pooled.rows();
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) dist.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (dist.empty()) return 0.0;
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double med = dist[mid];
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  return med;
}

double mmd(const Matrix& A, const Matrix& B) {
  require_same_width(A, B, "mmd");
  double sigma = median_pairwise_distance(stack(A, B));
  if (!(sigma > 0.0)) sigma = 1.0;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  auto mean_kernel = [&](const Matrix& X, const Matrix& Y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < Y.rows(); ++j)
        s += std::exp(-(X.row(i) - Y.row(j)).squaredNorm() * inv);
    return s / (static_cast<double>(X.rows()) * static_cast<double>(Y.rows()));
  };
  const double sq = mean_kernel(A, A) + mean_kernel(B, B) - 2.0 * mean_kernel(A, B);
  return std::sqrt(std::max(sq, 0.0));
}

double proxy_a_distance(const Matrix& A, const Matrix& B, RngStream& rng) {
  if (A.rows() < 2 || B.rows() < 2)
    throw InputError("proxy_a_distance needs at least 2 instances per domain");
  require_same_width(A, B, "proxy_a_distance");
  // Each domain is halved separately so both halves stay balanced.
  const auto a_order = shuffled_indices(static_cast<int>(A.rows()), rng);
  const auto b_order = shuffled_indices(static_cast<int>(B.rows()), rng);
  const std::size_t a_half = a_order.size() / 2, b_half = b_order.size() / 2;
  auto part = [](const Matrix& M, const std::vector<int>& order, std::size_t from, std::size_t to) {
    return gather_rows(M, std::span<const int>(order.data() + from, to - from));
  };
  const Matrix train_x = stack(part(A, a_order, 0, a_half), part(B, b_order, 0, b_half));
  const Matrix test_x =
      stack(part(A, a_order, a_half, a_order.size()), part(B, b_order, b_half, b_order.size()));
  Vector train_y(train_x.rows()), test_y(test_x.rows());
  train_y << Vector::Zero(static_cast<Eigen::Index>(a_half)),
      Vector::Ones(static_cast<Eigen::Index>(b_half));
  test_y << Vector::Zero(static_cast<Eigen::Index>(a_order.size() - a_half)),
      Vector::Ones(static_cast<Eigen::Index>(b_order.size() - b_half));

  // Standardize with training statistics so a fixed step size is stable.
  const Eigen::RowVectorXd mean = train_x.colwise().mean();
  Eigen::RowVectorXd sd =
      ((train_x.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (!(sd(j) > 0.0)) sd(j) = 1.0;
  auto standardize = [&](const Matrix& X) {
    return Matrix(((X.rowwise() - mean).array().rowwise() / sd.array()).matrix());
  };

  const LogisticModel m = fit_logistic(standardize(train_x), train_y, 200, 0.1);
  const Vector logits = (standardize(test_x) * m.w).array() + m.b;
  int errors = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if ((logits(i) > 0.0 ? 1.0 : 0.0) != test_y(i)) ++errors;
  const double err = static_cast<double>(errors) / static_cast<double>(logits.size());
  return std::clamp(2.0 * (1.0 - 2.0 * err), 0.0, 2.0);
}

AngleResult corresponding_angle(const Matrix& A, const Matrix& B, int k_max) {
  require_same_width(A, B, "corresponding_angle");
  if (k_max < 1) throw ConfigError("corresponding_angle: k must be >= 1");
  auto right_vectors = [](const Matrix& X, int& rank) {
    const Matrix centred = X.rowwise() - X.colwise().mean();
    Eigen::JacobiSVD<Matrix> svd(centred, Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    rank = 0;
    const double cut = s.size() > 0 ? s(0) * 1e-10 : 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (s(i) > cut) ++rank;
    return Matrix(svd.matrixV());
  };
  int rank_a = 0, rank_b = 0;
  const Matrix Va = right_vectors(A, rank_a);
  const Matrix Vb = right_vectors(B, rank_b);
  AngleResult out;
  out.pairs = std::min({k_max, rank_a, rank_b});
  if (out.pairs == 0) return out;
  double s = 0.0;
  for (int i = 0; i < out.pairs; ++i) s += std::abs(Va.col(i).dot(Vb.col(i)));
  out.value = s / out.pairs;
  return out;
}

double leep(const Matrix& source_probs, const Labels& target_labels, int num_target_classes) {
  const Eigen::Index n = source_probs.rows(), Ks = source_probs.cols();
  if (static_cast<Eigen::Index>(target_labels.size()) != n)
    throw DimensionError("leep: label count differs from prediction rows");
  Matrix joint = Matrix::Zero(num_target_classes, Ks);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = target_labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_target_classes)
      throw LabelError("leep: label " + std::to_string(y) + " out of range");
    joint.row(y) += source_probs.row(i);
  }
  joint /= static_cast<double>(n);
  const Eigen::RowVectorXd marginal = joint.colwise().sum();
  Matrix conditional = Matrix::Zero(num_target_classes, Ks);
  for (Eigen::Index z = 0; z < Ks; ++z)
    if (marginal(z) > 0.0) conditional.col(z) = joint.col(z) / marginal(z);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = target_labels[static_cast<std::size_t>(i)];
    total += clamped_log(conditional.row(y).dot(source_probs.row(i)));
  }
  return total / static_cast<double>(n);
}

double nce(const std::vector<int>& source_hard, const Labels& target_labels) {
  if (source_hard.size() != target_labels.size())
    throw DimensionError("nce: inputs differ in length");
  if (source_hard.empty()) throw InputError("nce: empty input");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> marginal;
  for (std::size_t i = 0; i < source_hard.size(); ++i) {
    joint[{source_hard[i], target_labels[i]}] += 1.0;
    marginal[source_hard[i]] += 1.0;
  }
  const double n = static_cast<double>(source_hard.size());
  double h = 0.0;
  for (const auto& [key, count] : joint) h -= (count / n) * std::log(count / marginal[key.first]);
  return -h;
}

LogmeResult logme(const Matrix& features, const Labels& labels, int max_iter, double tol) {
  const Eigen::Index n = features.rows(), D = features.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw DimensionError("logme: label count differs from feature rows");
  if (n < 1 || D < 1) throw InputError("logme: empty features");
  Eigen::BDCSVD<Matrix> svd(features, Eigen::ComputeThinU);
  const Vector sigma = svd.singularValues();
  const Vector s = sigma.cwiseAbs2();
  const Matrix& U = svd.matrixU();
  const int K = *std::max_element(labels.begin(), labels.end()) + 1;
  const double nd = static_cast<double>(n), Dd = static_cast<double>(D);

  LogmeResult out;
  for (int k = 0; k < K; ++k) {
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)] == k ? 1.0 : 0.0;
    const Vector z = U.transpose() * y;
    const Vector z2 = z.cwiseAbs2();
    const double outside = std::max(y.squaredNorm() - z2.sum(), 0.0);
    double alpha = 1.0, beta = 1.0, m2 = 0.0, res2 = 0.0;
    auto moments = [&](double a, double b) {
      const Vector denom = (a + b * s.array()).matrix();
      m2 = (b * b * s.array() * z2.array() / denom.array().square()).sum();
      res2 = (a * a * z2.array() / denom.array().square()).sum() + outside;
      return (b * s.array() / denom.array()).sum();
    };
    bool converged = false;
    for (int it = 0; it < max_iter; ++it) {
      const double gamma = moments(alpha, beta);
      const double na = gamma / std::max(m2, 1e-300);
      const double nb = (nd - gamma) / std::max(res2, 1e-300);
      const double change = std::abs(na - alpha) + std::abs(nb - beta);
      alpha = na;
      beta = nb;
      if (change < tol) {
        converged = true;
        break;
      }
    }
    moments(alpha, beta);
    // Zero singular values are padded up to D.
    const double logdet =
        (alpha + beta * s.array()).log().sum() + static_cast<double>(D - s.size()) * std::log(alpha);
    const double evidence = 0.5 * nd * std::log(beta) + 0.5 * Dd * std::log(alpha) -
                            0.5 * nd * std::log(2.0 * std::numbers::pi) - 0.5 * beta * res2 -
                            0.5 * alpha * m2 - 0.5 * logdet;
    out.alpha.push_back(alpha);
    out.beta.push_back(beta);
    out.evidence.push_back(evidence / nd);
    out.converged = out.converged && converged;
  }
  out.value = std::accumulate(out.evidence.begin(), out.evidence.end(), 0.0) / K;
  return out;
}

std::vector<CurvePoint> accuracy_utr_curve(const UtrInstance& utr_i,
                                           const std::vector<bool>& correct,
                                           const std::vector<double>& thresholds) {
  if (static_cast<Eigen::Index>(correct.size()) != utr_i.values.size())
    throw DimensionError("accuracy_utr_curve: flag count differs from UTR_I length");
  std::vector<CurvePoint> curve;
  for (double t : thresholds) {
    CurvePoint pt{t, std::nullopt, 0};
    int hits = 0;
    for (Eigen::Index i = 0; i < utr_i.values.size(); ++i)
      if (utr_i.values(i) > t) {
        ++pt.count;
        hits += correct[static_cast<std::size_t>(i)] ? 1 : 0;
      }
    if (pt.count > 0) pt.accuracy = static_cast<double>(hits) / pt.count;
    curve.push_back(pt);
  }
  return curve;
}

std::vector<double> quantile_thresholds(const UtrInstance& utr_i, int count) {
  if (count < 1) throw ConfigError("eval.curve_points must be >= 1");
  if (utr_i.values.size() < 1) throw InputError("quantile_thresholds of an empty UTR_I");
  std::vector<double> sorted(utr_i.values.data(), utr_i.values.data() + utr_i.values.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  for (int j = 0; j < count; ++j)
    out.push_back(sorted[sorted.size() * static_cast<std::size_t>(j) / static_cast<std::size_t>(count)]);
  return out;
}

const Measurement& MeasurementReport::at(const std::string& name) const {
  for (const auto& m : measurements)
    if (m.name == name) return m;
  throw InputError("report has no measurement '" + name + "'");
}

MeasurementReport build_report(const ModelParams& source_params, const Dataset& source_data,
                               const Dataset& target_data, const ChannelSplit& split,
                               std::uint64_t seed) {
  const Labels& target_y = labels_of(target_data, "build_report");
  const Matrix zs = encode(source_params, source_data.features);
  const Matrix zt = encode(source_params, target_data.features);
  const int K = source_params.arch.num_classes;

  struct Half {
    double mmd, a_distance, angle, leep, nce, logme, accuracy;
    std::string angle_note;
  };
  auto evaluate = [&](const std::vector<int>& keep) {
    Half h;
    const Matrix ps = select_columns(zs, keep);
    const Matrix pt = select_columns(zt, keep);
    h.mmd = mmd(ps, pt);
    RngStream rng(seed, "a_distance");
    h.a_distance = proxy_a_distance(ps, pt, rng);
    const AngleResult angle = corresponding_angle(ps, pt);
    h.angle = angle.value;
    if (angle.pairs < 10)
      h.angle_note = std::to_string(angle.pairs) + " directions available";
    const Matrix probs = softmax(classify(source_params, masked_features(source_params,
                                                                           target_data.features, keep)));
    h.leep = leep(probs, target_y, K);
    const auto hard = argmax_rows(probs);
    h.nce = nce(hard, target_y);
    h.logme = logme(pt, target_y).value;
    h.accuracy = accuracy(hard, target_y);
    return h;
  };
  const Half lo = evaluate(split.low_idx);
  const Half hi = evaluate(split.high_idx);

  std::string angle_note;
  if (!lo.angle_note.empty()) angle_note += "z_low: " + lo.angle_note;
  if (!hi.angle_note.empty())
    angle_note += (angle_note.empty() ? "" : "; ") + std::string("z_high: ") + hi.angle_note;

  MeasurementReport r;
  r.measurements = {
      {"mmd", lo.mmd, hi.mmd, Direction::lower_better, {}},
      {"a_distance", lo.a_distance, hi.a_distance, Direction::lower_better, {}},
      {"corresponding_angle", lo.angle, hi.angle, Direction::higher_better, angle_note},
      {"leep", lo.leep, hi.leep, Direction::higher_better, {}},
      {"nce", lo.nce, hi.nce, Direction::higher_better, {}},
      {"logme", lo.logme, hi.logme, Direction::higher_better, {}},
      {"accuracy", lo.accuracy, hi.accuracy, Direction::higher_better, {}},
  };
  return r;
}

nlohmann::json report_to_json(const MeasurementReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& m : report.measurements) {
    nlohmann::json e{{"z_low", m.z_low},
                     {"z_high", m.z_high},
                     {"direction", m.direction == Direction::lower_better ? "lower_better"
                                                                          : "higher_better"}};
    if (!m.note.empty()) e["note"] = m.note;
    j[m.name] = e;
  }
  return j;
}

std::string report_to_csv(const MeasurementReport& report) {
  std::ostringstream os;
  os << "measurement,z_low,z_high,direction,z_low_favored\n";
  for (const auto& m : report.measurements)
    os << m.name << "," << format_double(m.z_low) << "," << format_double(m.z_high) << ","
       << (m.direction == Direction::lower_better ? "lower_better" : "higher_better") << ","
       << (m.low_favored() ? 1 : 0) << "\n";
  return os.str();
}

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << "threshold,accuracy,count\n";
  for (const auto& p : curve)
    os << format_double(p.threshold) << "," << (p.accuracy ? format_double(*p.accuracy) : "null")
       << "," << p.count << "\n";
  return os.str();
}

}  // namespace utrcaf
