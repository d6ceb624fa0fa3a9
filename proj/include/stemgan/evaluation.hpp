#pragma once

// Quality measures for generated drum spectrograms: per-bin correlation
// features, Gaussian fits over deep embeddings (Frechet distance and
// per-sample density), annotator agreement, grade buckets and the
// classifiers mapping features to grades.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stemgan/dataset.hpp"
#include "stemgan/models/networks.hpp"

namespace stemgan::eval {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// S_i = sum_t (x_i^t - mean_t(x)) (y_i^t - mean_t(y)), where mean_t is the
/// mean of column t. One value per row (mel bin).
inline VectorXd stoi_features(const RealMatrix& x, const RealMatrix& y) {
  require(x.rows() == y.rows() && x.cols() == y.cols(), Errc::shape_mismatch,
          "stoi_features: " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + " vs " +
              std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
  require(x.size() > 0, Errc::empty_input, "stoi_features: empty matrices");
  const MatrixXd xc = x.rowwise() - x.colwise().mean();
  const MatrixXd yc = y.rowwise() - y.colwise().mean();
  return xc.cwiseProduct(yc).rowwise().sum();
}

/// Levels back to the dB grid the features are computed on.
inline RealMatrix feature_matrix(const LevelMatrix& levels, double floor_db = -80.0) {
  return dequantize(levels, floor_db);
}

// ---- Gaussian models ---------------------------------------------------------

inline constexpr double kCovarianceEpsilon = 1e-6;

struct GaussianModel {
  VectorXd mu;
  MatrixXd sigma;
  Eigen::Index dim() const { return mu.size(); }
};

/// Sample mean and (n - 1)-normalized covariance of the rows of `samples`,
/// plus eps on the diagonal.
inline GaussianModel fit_gaussian(const MatrixXd& samples, double eps = kCovarianceEpsilon) {
  require(samples.rows() >= 2, Errc::invalid_argument,
          "fit_gaussian needs at least 2 samples, got " + std::to_string(samples.rows()));
  require(samples.allFinite(), Errc::non_finite, "fit_gaussian: non-finite embeddings");
  GaussianModel m;
  m.mu = samples.colwise().mean().transpose();
  const MatrixXd centered = samples.rowwise() - m.mu.transpose();
  m.sigma = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  m.sigma = 0.5 * (m.sigma + m.sigma.transpose());
  m.sigma.diagonal().array() += eps;
  return m;
}

inline void check_covariance(const MatrixXd& s, const char* what) {
  require(s.rows() == s.cols(), Errc::shape_mismatch, std::string(what) + " is not square");
  require(s.allFinite(), Errc::non_finite, std::string(what) + " has non-finite entries");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  require((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale, Errc::invalid_argument,
          std::string(what) + " is not symmetric");
}

/// Square root of a symmetric PSD matrix; eigenvalues below zero (noise)
/// are clamped. Fails if one is more negative than the tolerance.
inline MatrixXd psd_sqrt(const MatrixXd& s, double tol = 1e-8) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(s);
  require(es.info() == Eigen::Success, Errc::non_finite, "eigendecomposition failed");
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  require(es.eigenvalues().minCoeff() >= -tol * scale, Errc::invalid_argument,
          "covariance is not positive semidefinite (eigenvalue " + std::to_string(es.eigenvalues().minCoeff()) + ")");
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// ||mu_r - mu_g||^2 + Tr(S_r) + Tr(S_g) - 2 Tr((S_r^1/2 S_g S_r^1/2)^1/2),
/// clamped at zero.
inline double fid(const GaussianModel& r, const GaussianModel& g) {
  require(r.dim() == g.dim() && r.sigma.rows() == r.dim() && g.sigma.rows() == g.dim(), Errc::shape_mismatch,
          "fid: dimensions " + std::to_string(r.dim()) + " and " + std::to_string(g.dim()));
  check_covariance(r.sigma, "sigma_r");
  check_covariance(g.sigma, "sigma_g");
  const MatrixXd rr = psd_sqrt(r.sigma);
  MatrixXd inner = rr * g.sigma * rr;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, Errc::non_finite, "eigendecomposition failed");
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (r.mu - g.mu).squaredNorm() + r.sigma.trace() + g.sigma.trace() - 2.0 * cross;
  return std::max(d, 0.0);
}

/// Multivariate normal log-density through a Cholesky solve.
inline double gaussian_log_density(const VectorXd& x, const GaussianModel& m) {
  require(x.size() == m.dim(), Errc::shape_mismatch,
          "log density: vector of size " + std::to_string(x.size()) + " for a " + std::to_string(m.dim()) + "-d model");
  const Eigen::LLT<MatrixXd> llt(m.sigma);
  require(llt.info() == Eigen::Success, Errc::invalid_argument, "covariance is singular or not positive definite");
  const VectorXd z = llt.matrixL().solve(x - m.mu);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(m.dim()) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

// ---- agreement and buckets ---------------------------------------------------

inline double pearson(const VectorXd& a, const VectorXd& b) {
  require(a.size() == b.size() && a.size() >= 2, Errc::invalid_argument,
          "pearson needs two vectors of equal length >= 2");
  const VectorXd ac = a.array() - a.mean();
  const VectorXd bc = b.array() - b.mean();
  const double na = ac.norm(), nb = bc.norm();
  require(na > 0.0 && nb > 0.0, Errc::invalid_argument, "pearson: zero variance");
  return std::clamp(ac.dot(bc) / (na * nb), -1.0, 1.0);
}

enum class GradeBucket { b0_3 = 0, b4_5 = 1, b6_7 = 2, b8_9 = 3 };
inline constexpr int kBucketCount = 4;

inline const char* to_string(GradeBucket b) {
  static constexpr const char* names[] = {"B0_3", "B4_5", "B6_7", "B8_9"};
  return names[static_cast<int>(b)];
}

inline GradeBucket parse_bucket(const std::string& s) {
  for (int i = 0; i < kBucketCount; ++i)
    if (s == to_string(static_cast<GradeBucket>(i))) return static_cast<GradeBucket>(i);
  throw Error(Errc::invalid_argument, "unknown grade bucket '" + s + "'");
}

/// Rounds to the nearest integer grade, then buckets 0-3 / 4-5 / 6-7 / 8-9.
inline GradeBucket grade_bucket(double mean_grade) {
  require(std::isfinite(mean_grade), Errc::invalid_argument, "grade is not finite");
  const double g = std::round(mean_grade);
  require(g >= 0.0 && g <= 9.0, Errc::invalid_argument, "grade " + std::to_string(mean_grade) + " outside 0..9");
  if (g <= 3.0) return GradeBucket::b0_3;
  if (g <= 5.0) return GradeBucket::b4_5;
  if (g <= 7.0) return GradeBucket::b6_7;
  return GradeBucket::b8_9;
}

// ---- classifiers -------------------------------------------------------------

/// Per-column z-scoring; columns with zero spread are only centered.
struct Standardizer {
  VectorXd mean, scale;

  static Standardizer fit(const MatrixXd& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double sd = std::sqrt((x.col(j).array() - s.mean(j)).square().mean());
      s.scale(j) = sd > 0.0 ? sd : 1.0;
    }
    return s;
  }

  MatrixXd apply(const MatrixXd& x) const {
    require(x.cols() == mean.size(), Errc::shape_mismatch,
            "expected " + std::to_string(mean.size()) + " features, got " + std::to_string(x.cols()));
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

struct LogisticOptions {
  double l2 = 1e-4;
  double grad_tol = 1e-6;
  int max_iters = 10000;
};

/// Multinomial softmax regression over the buckets present in the training
/// labels.
struct LogisticModel {
  MatrixXd weights;  // classes x features
  VectorXd bias;     // classes
  std::vector<GradeBucket> classes;
  Standardizer standardizer;
  bool fitted = false;
  int iterations = 0;
  std::vector<double> loss_history;

  VectorXd scores(const VectorXd& standardized_row) const {
    return weights * standardized_row + bias;
  }
};

namespace detail {

inline MatrixXd softmax_rows(const MatrixXd& logits) {
  MatrixXd p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  return p.array().colwise() / p.rowwise().sum().array();
}

// Largest eigenvalue of a^T a / n by power iteration.
inline double gram_spectral_norm(const MatrixXd& a) {
  VectorXd v = VectorXd::Ones(a.cols()).normalized();
  double lambda = 0.0;
  for (int i = 0; i < 200; ++i) {
    VectorXd w = a.transpose() * (a * v) / static_cast<double>(a.rows());
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    v = w / n;
    if (std::abs(n - lambda) <= 1e-12 * n) {
      lambda = n;
      break;
    }
    lambda = n;
  }
  return lambda * 1.01;  // margin for an unconverged estimate
}

}  // namespace detail

/// Full-batch gradient descent with step 1/L, L the Lipschitz bound of the
/// regularized softmax loss gradient; stops at gradient norm grad_tol or
/// max_iters.
inline LogisticModel fit_logistic(const MatrixXd& features, const std::vector<GradeBucket>& labels,
                                  const LogisticOptions& opt = {}) {
  require(static_cast<std::size_t>(features.rows()) == labels.size(), Errc::shape_mismatch,
          "fit_logistic: " + std::to_string(features.rows()) + " rows but " + std::to_string(labels.size()) + " labels");
  require(features.allFinite(), Errc::non_finite, "fit_logistic: non-finite features");
  LogisticModel m;
  for (GradeBucket b : labels)
    if (std::find(m.classes.begin(), m.classes.end(), b) == m.classes.end()) m.classes.push_back(b);
  std::sort(m.classes.begin(), m.classes.end());
  require(m.classes.size() >= 2, Errc::invalid_argument, "fit_logistic needs at least two distinct buckets");
  const auto k = static_cast<Eigen::Index>(m.classes.size());
  const Eigen::Index n = features.rows(), p = features.cols();
  require(n >= k, Errc::invalid_argument, "fewer samples than classes");

  m.standardizer = Standardizer::fit(features);
  MatrixXd x(n, p + 1);
  x.leftCols(p) = m.standardizer.apply(features);
  x.col(p).setOnes();
  MatrixXd y = MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto it = std::find(m.classes.begin(), m.classes.end(), labels[static_cast<std::size_t>(i)]);
    y(i, it - m.classes.begin()) = 1.0;
  }

  const double lipschitz = 0.5 * detail::gram_spectral_norm(x) + opt.l2;
  const double step = 1.0 / lipschitz;
  MatrixXd w = MatrixXd::Zero(p + 1, k);  // last row is the bias
  auto loss_and_grad = [&](MatrixXd* grad) {
    const MatrixXd logits = x * w;
    const MatrixXd prob = detail::softmax_rows(logits);
    const VectorXd lse = logits.rowwise().maxCoeff() +
                         (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().rowwise().sum().log().matrix();
    double loss = (lse - logits.cwiseProduct(y).rowwise().sum()).mean();
    loss += 0.5 * opt.l2 * w.topRows(p).squaredNorm();
    if (grad) {
      *grad = x.transpose() * (prob - y) / static_cast<double>(n);
      grad->topRows(p) += opt.l2 * w.topRows(p);
    }
    return loss;
  };

  MatrixXd grad;
  double loss = loss_and_grad(&grad);
  m.loss_history.push_back(loss);
  for (int it = 0; it < opt.max_iters && grad.norm() > opt.grad_tol; ++it) {
    w -= step * grad;
    loss = loss_and_grad(&grad);
    m.loss_history.push_back(loss);
    ++m.iterations;
  }
  m.weights = w.topRows(p).transpose();
  m.bias = w.row(p).transpose();
  m.fitted = true;
  return m;
}

inline std::vector<GradeBucket> predict(const LogisticModel& m, const MatrixXd& features) {
  require(m.fitted, Errc::not_fitted, "logistic model is not fitted");
  const MatrixXd z = m.standardizer.apply(features);
  std::vector<GradeBucket> out;
  out.reserve(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    m.scores(z.row(i).transpose()).maxCoeff(&best);
    out.push_back(m.classes[static_cast<std::size_t>(best)]);
  }
  return out;
}

inline double accuracy(const std::vector<GradeBucket>& predicted, const std::vector<GradeBucket>& truth) {
  require(predicted.size() == truth.size() && !truth.empty(), Errc::shape_mismatch, "accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

/// Ridge regression of a continuous score (mean human grade) on the same
/// standardized features.
struct LinearModel {
  VectorXd weights;
  double bias = 0.0;
  Standardizer standardizer;
  bool fitted = false;
};

inline LinearModel fit_linear(const MatrixXd& features, const VectorXd& targets, double l2 = 1e-4) {
  require(features.rows() == targets.size() && features.rows() >= 2, Errc::shape_mismatch,
          "fit_linear: rows and targets differ or fewer than 2 samples");
  LinearModel m;
  m.standardizer = Standardizer::fit(features);
  const MatrixXd z = m.standardizer.apply(features);
  m.bias = targets.mean();
  const VectorXd t = targets.array() - m.bias;
  MatrixXd gram = z.transpose() * z;
  gram.diagonal().array() += l2 * static_cast<double>(z.rows());
  m.weights = gram.ldlt().solve(z.transpose() * t);
  m.fitted = true;
  return m;
}

inline VectorXd predict(const LinearModel& m, const MatrixXd& features) {
  require(m.fitted, Errc::not_fitted, "linear model is not fitted");
  return (m.standardizer.apply(features) * m.weights).array() + m.bias;
}

// ---- embeddings --------------------------------------------------------------

/// Spatially averaged activations of discriminator blocks. The default is
/// the single block feeding the logit head.
class Embedder {
 public:
  Embedder() = default;
  explicit Embedder(models::PatchDiscriminator<float> disc, std::vector<int> layers = {})
      : disc_(std::move(disc)), layers_(std::move(layers)) {
    const int blocks = static_cast<int>(disc_.block_count());
    require(blocks > 0, Errc::not_fitted, "embedder has no discriminator");
    if (layers_.empty()) layers_.push_back(blocks - 1);
    for (int l : layers_)
      require(l >= 0 && l < blocks, Errc::invalid_argument,
              "embedding layer " + std::to_string(l) + " outside 0.." + std::to_string(blocks - 1));
  }

  bool ready() const { return !layers_.empty(); }
  const std::vector<int>& layers() const { return layers_; }
  Eigen::Index dim(std::size_t k = 0) const {
    require(ready(), Errc::not_fitted, "embedder has no discriminator");
    return static_cast<Eigen::Index>(disc_.channels(layers_.at(k)));
  }

  /// One vector per configured layer.
  std::vector<VectorXd> embed(const LevelMatrix& chunk) const {
    require(ready(), Errc::not_fitted, "embedder has no discriminator");
    ag::NoGradGuard guard;
    const auto feats = disc_.features(to_tensor<float>(chunk));
    std::vector<VectorXd> out;
    for (int l : layers_) {
      const auto& a = feats[static_cast<std::size_t>(l)];
      const std::size_t c = a.dim(1), plane = a.dim(2) * a.dim(3);
      VectorXd v(static_cast<Eigen::Index>(c));
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += a.data()[ch * plane + i];
        v(static_cast<Eigen::Index>(ch)) = s / static_cast<double>(plane);
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  /// Per layer, a samples x dim matrix.
  std::vector<MatrixXd> embed_all(const std::vector<const LevelMatrix*>& chunks) const {
    std::vector<MatrixXd> out;
    for (std::size_t k = 0; k < layers_.size(); ++k)
      out.emplace_back(static_cast<Eigen::Index>(chunks.size()), dim(k));
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto e = embed(*chunks[i]);
      for (std::size_t k = 0; k < e.size(); ++k) out[k].row(static_cast<Eigen::Index>(i)) = e[k].transpose();
    }
    return out;
  }

 private:
  models::PatchDiscriminator<float> disc_;
  std::vector<int> layers_;
};

/// Externally computed embeddings keyed by (song id, offset). File layout:
/// one line per sample and layer, "song_id<TAB>offset<TAB>layer<TAB>v1<TAB>v2...".
class EmbeddingTable {
 public:
  static EmbeddingTable read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::missing_file, path.string());
    EmbeddingTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string song, field;
      int offset = 0, layer = 0;
      std::getline(ls, song, '\t');
      std::vector<double> v;
      try {
        std::getline(ls, field, '\t');
        offset = std::stoi(field);
        std::getline(ls, field, '\t');
        layer = std::stoi(field);
        while (std::getline(ls, field, '\t')) v.push_back(std::stod(field));
      } catch (const std::logic_error&) {
        throw Error(Errc::format_error, path.string() + ":" + std::to_string(line_no) + ": bad number");
      }
      require(layer >= 0 && !v.empty(), Errc::format_error,
              path.string() + ":" + std::to_string(line_no) + ": expected song, offset, layer and values");
      auto& slot = t.rows_[{song, offset}];
      if (slot.size() <= static_cast<std::size_t>(layer)) slot.resize(static_cast<std::size_t>(layer) + 1);
      slot[static_cast<std::size_t>(layer)] = Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      t.layers_ = std::max(t.layers_, static_cast<std::size_t>(layer) + 1);
    }
    require(!t.rows_.empty(), Errc::empty_input, path.string() + " holds no embeddings");
    for (const auto& [key, layers] : t.rows_) {
      require(layers.size() == t.layers_, Errc::format_error, key.first + "@" + std::to_string(key.second) +
                                                                   " lacks some embedding layers");
      for (std::size_t k = 0; k < layers.size(); ++k)
        require(layers[k].size() == t.rows_.begin()->second[k].size(), Errc::format_error,
                "embedding dimension differs at " + key.first + "@" + std::to_string(key.second));
    }
    return t;
  }

  std::size_t layers() const { return layers_; }
  std::size_t size() const { return rows_.size(); }

  const std::vector<VectorXd>& at(const std::string& song, int offset) const {
    const auto it = rows_.find({song, offset});
    if (it == rows_.end())
      throw Error(Errc::missing_file, "no embedding for " + song + "@" + std::to_string(offset));
    return it->second;
  }

  std::vector<MatrixXd> matrices() const {
    std::vector<MatrixXd> out;
    for (std::size_t k = 0; k < layers_; ++k) {
      MatrixXd m(static_cast<Eigen::Index>(rows_.size()), rows_.begin()->second[k].size());
      Eigen::Index i = 0;
      for (const auto& [key, layers] : rows_) m.row(i++) = layers[k].transpose();
      out.push_back(std::move(m));
    }
    return out;
  }

 private:
  std::map<std::pair<std::string, int>, std::vector<VectorXd>> rows_;
  std::size_t layers_ = 0;
};

inline std::vector<GaussianModel> fit_gaussians(const std::vector<MatrixXd>& per_layer) {
  std::vector<GaussianModel> out;
  for (const auto& m : per_layer) out.push_back(fit_gaussian(m));
  return out;
}

// ---- per-sample scoring --------------------------------------------------------

/// How a generated chunk is embedded for the density features; unset means
/// the correlation features are used alone.
using EmbedFn = std::function<std::vector<VectorXd>(const Chunk&)>;

inline EmbedFn embed_with(const Embedder& e) {
  return [&e](const Chunk& c) { return e.embed(c.pixels); };
}

inline EmbedFn embed_from(const EmbeddingTable& t) {
  return [&t](const Chunk& c) { return t.at(c.song_id, c.offset); };
}

struct FeatureContext {
  EmbedFn embed;
  std::vector<GaussianModel> real;  // one per embedding layer
  double floor_db = -80.0;

  bool uses_density() const { return static_cast<bool>(embed); }
  Eigen::Index width(Eigen::Index n_mels) const {
    return n_mels + (uses_density() ? static_cast<Eigen::Index>(real.size()) : 0);
  }
};

/// The per-bin correlation features of (original, generated), then the
/// log-density of the generated sample's embeddings under the Gaussians
/// fitted to real embeddings.
inline VectorXd pair_features(const LevelMatrix& original, const Chunk& generated, const FeatureContext& ctx) {
  const VectorXd s =
      stoi_features(feature_matrix(original, ctx.floor_db), feature_matrix(generated.pixels, ctx.floor_db));
  VectorXd out(ctx.width(s.size()));
  out.head(s.size()) = s;
  if (ctx.uses_density()) {
    require(!ctx.real.empty(), Errc::not_fitted, "density features need Gaussians fitted to real embeddings");
    const auto e = ctx.embed(generated);
    require(e.size() == ctx.real.size(), Errc::shape_mismatch,
            std::to_string(e.size()) + " embedding layers for " + std::to_string(ctx.real.size()) + " Gaussians");
    for (std::size_t k = 0; k < e.size(); ++k)
      out(s.size() + static_cast<Eigen::Index>(k)) = gaussian_log_density(e[k], ctx.real[k]);
  }
  return out;
}

inline MatrixXd pair_feature_matrix(const std::vector<const LevelMatrix*>& originals,
                                    const std::vector<Chunk>& generated, const FeatureContext& ctx) {
  require(originals.size() == generated.size(), Errc::shape_mismatch,
          std::to_string(originals.size()) + " originals but " + std::to_string(generated.size()) + " generated chunks");
  if (originals.empty()) return MatrixXd(0, 0);
  MatrixXd out(static_cast<Eigen::Index>(originals.size()), ctx.width(originals.front()->rows()));
  for (std::size_t i = 0; i < originals.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = pair_features(*originals[i], generated[i], ctx).transpose();
  return out;
}

/// Column-permuted copy of a chunk: the same levels per bin, time structure
/// destroyed.
inline LevelMatrix shuffle_columns(const LevelMatrix& m, std::mt19937_64& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m.cols()));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  LevelMatrix out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) out.col(j) = m.col(order[static_cast<std::size_t>(j)]);
  return out;
}

/// Classifier training set when no human grades exist: each original paired
/// with itself is labeled B8_9, with a time-shuffled copy of itself B0_3.
struct LabeledPairs {
  std::vector<const LevelMatrix*> originals;
  std::vector<Chunk> generated;
  std::vector<GradeBucket> labels;
};

inline LabeledPairs self_consistency_pairs(const std::vector<Chunk>& originals, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabeledPairs out;
  for (const auto& c : originals) {
    out.originals.push_back(&c.pixels);
    out.generated.push_back(c);
    out.labels.push_back(GradeBucket::b8_9);
  }
  for (const auto& c : originals) {
    out.originals.push_back(&c.pixels);
    out.generated.push_back({shuffle_columns(c.pixels, rng), c.song_id, c.offset, c.domain});
    out.labels.push_back(GradeBucket::b0_3);
  }
  return out;
}

struct SampleScore {
  std::string song_id;
  int offset = 0;
  VectorXd features;
  GradeBucket bucket = GradeBucket::b0_3;
};

struct ScoreTable {
  Eigen::Index n_mels = 0;
  std::size_t density_features = 0;
  std::vector<SampleScore> rows;
  std::array<std::size_t, kBucketCount> histogram{};
};

/// Scores aligned (original, generated) chunk pairs with a fitted classifier.
inline ScoreTable score_samples(const std::vector<Chunk>& originals, const std::vector<Chunk>& generated,
                                const LogisticModel& model, const FeatureContext& ctx) {
  require(originals.size() == generated.size(), Errc::shape_mismatch,
          std::to_string(originals.size()) + " originals but " + std::to_string(generated.size()) + " generated chunks");
  require(model.fitted, Errc::not_fitted, "logistic model is not fitted");
  ScoreTable table;
  if (originals.empty()) return table;
  std::vector<const LevelMatrix*> orig;
  for (const auto& c : originals) orig.push_back(&c.pixels);
  const MatrixXd f = pair_feature_matrix(orig, generated, ctx);
  const auto buckets = predict(model, f);
  table.n_mels = originals.front().pixels.rows();
  table.density_features = static_cast<std::size_t>(f.cols() - table.n_mels);
  for (std::size_t i = 0; i < originals.size(); ++i) {
    SampleScore s{generated[i].song_id, generated[i].offset, f.row(static_cast<Eigen::Index>(i)).transpose(),
                  buckets[i]};
    ++table.histogram[static_cast<std::size_t>(s.bucket)];
    table.rows.push_back(std::move(s));
  }
  return table;
}

inline void write_score_table(const std::filesystem::path& path, const ScoreTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << "#song_id\toffset";
  for (Eigen::Index i = 0; i < t.n_mels; ++i) out << "\tS" << i;
  for (std::size_t k = 0; k < t.density_features; ++k) out << "\tlogp" << k;
  out << "\tbucket\n";
  char buf[40];
  for (const auto& r : t.rows) {
    out << r.song_id << '\t' << r.offset;
    for (double v : r.features) {
      std::snprintf(buf, sizeof buf, "\t%.9g", v);
      out << buf;
    }
    out << '\t' << to_string(r.bucket) << '\n';
  }
  out << "#histogram";
  for (int b = 0; b < kBucketCount; ++b)
    out << '\t' << to_string(static_cast<GradeBucket>(b)) << '=' << t.histogram[static_cast<std::size_t>(b)];
  out << '\n';
  if (!out) throw Error(Errc::io_failure, "write failed: " + path.string());
}

// ---- human annotations -------------------------------------------------------

enum class Aspect { quality, contamination, credibility, time };
inline constexpr int kAspectCount = 4;

/// Integer grades 0-9 per (sample, rater, aspect). File layout, one record
/// per line: "sample_id<TAB>rater_id<TAB>quality<TAB>contamination<TAB>credibility<TAB>time".
struct Annotations {
  std::vector<std::string> samples, raters;  // first-seen order
  std::map<std::pair<std::size_t, std::size_t>, std::array<int, kAspectCount>> grades;

  std::size_t sample_index(const std::string& id) const {
    const auto it = std::find(samples.begin(), samples.end(), id);
    require(it != samples.end(), Errc::missing_file, "no annotation for sample " + id);
    return static_cast<std::size_t>(it - samples.begin());
  }

  /// Mean over raters and aspects.
  double mean_grade(std::size_t sample) const {
    double s = 0.0;
    int n = 0;
    for (std::size_t r = 0; r < raters.size(); ++r) {
      const auto it = grades.find({sample, r});
      if (it == grades.end()) continue;
      for (int g : it->second) s += g, ++n;
    }
    require(n > 0, Errc::empty_input, "sample " + samples[sample] + " has no grades");
    return s / n;
  }

  /// Per-sample mean over aspects for one rater; every sample must be graded.
  VectorXd rater_means(std::size_t rater) const {
    VectorXd v(static_cast<Eigen::Index>(samples.size()));
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const auto it = grades.find({s, rater});
      require(it != grades.end(), Errc::format_error,
              "rater " + raters[rater] + " did not grade sample " + samples[s]);
      v(static_cast<Eigen::Index>(s)) = std::accumulate(it->second.begin(), it->second.end(), 0.0) / kAspectCount;
    }
    return v;
  }
};

inline Annotations read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::missing_file, path.string());
  Annotations a;
  auto index_of = [](std::vector<std::string>& v, const std::string& s) {
    const auto it = std::find(v.begin(), v.end(), s);
    if (it != v.end()) return static_cast<std::size_t>(it - v.begin());
    v.push_back(s);
    return v.size() - 1;
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string field; std::getline(ls, field, '\t');) f.push_back(field);
    require(f.size() == 2 + kAspectCount, Errc::format_error, where + ": expected 6 tab-separated fields");
    std::array<int, kAspectCount> g{};
    for (int k = 0; k < kAspectCount; ++k) {
      const std::string& s = f[static_cast<std::size_t>(2 + k)];
      require(s.size() == 1 && s[0] >= '0' && s[0] <= '9', Errc::format_error,
              where + ": grade '" + s + "' is not an integer 0-9");
      g[static_cast<std::size_t>(k)] = s[0] - '0';
    }
    const std::size_t si = index_of(a.samples, f[0]), ri = index_of(a.raters, f[1]);
    require(a.grades.emplace(std::pair{si, ri}, g).second, Errc::format_error,
            where + ": duplicate record for " + f[0] + " / " + f[1]);
  }
  require(!a.samples.empty(), Errc::empty_input, path.string() + " holds no annotations");
  return a;
}

/// Pairwise Pearson correlation between raters' per-sample mean grades.
inline MatrixXd rater_correlation(const Annotations& a) {
  const auto k = static_cast<Eigen::Index>(a.raters.size());
  std::vector<VectorXd> means;
  for (std::size_t r = 0; r < a.raters.size(); ++r) means.push_back(a.rater_means(r));
  MatrixXd out = MatrixXd::Identity(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j)
      out(i, j) = out(j, i) = pearson(means[static_cast<std::size_t>(i)], means[static_cast<std::size_t>(j)]);
  return out;
}

}  // namespace stemgan::eval
