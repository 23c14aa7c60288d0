#pragma once

#include "liverdiff/dataset.hpp"
#include "liverdiff/image.hpp"
#include "liverdiff/sampler.hpp"
#include "liverdiff/stats.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace liverdiff {

inline constexpr int kFeatureDim = 2048;
inline constexpr int kNumImageClasses = 1000;

/// Inception Score over `n_splits` contiguous splits of a probability batch
/// (one distribution per row). Returns the mean and population standard
/// deviation of the per-split scores.
template <typename Derived>
std::pair<double, double> inception_score(const Eigen::MatrixBase<Derived>& probs, int n_splits = 10) {
  const Eigen::Index n = probs.rows();
  if (n_splits < 1) throw std::invalid_argument("inception_score: n_splits must be >= 1");
  if (n < n_splits) throw std::invalid_argument("inception_score: fewer rows than splits");
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = static_cast<double>(probs.row(i).sum());
    if (std::abs(s - 1.0) > 1e-5 || (probs.row(i).array() < 0).any())
      throw std::invalid_argument("inception_score: row " + std::to_string(i) + " is not a probability distribution");
  }
  const Eigen::MatrixXd p = probs.template cast<double>();
  std::vector<double> scores;
  for (int k = 0; k < n_splits; ++k) {
    const Eigen::Index begin = k * n / n_splits;
    const Eigen::Index end = (k + 1) * n / n_splits;
    const auto part = p.middleRows(begin, end - begin);
    const Eigen::RowVectorXd marginal = part.colwise().mean();
    double kl_sum = 0;
    for (Eigen::Index i = 0; i < part.rows(); ++i)
      for (Eigen::Index j = 0; j < part.cols(); ++j)
        if (part(i, j) > 0) kl_sum += part(i, j) * (std::log(part(i, j)) - std::log(marginal(j)));
    scores.push_back(std::exp(kl_sum / static_cast<double>(part.rows())));
  }
  double m = 0;
  for (double s : scores) m += s;
  m /= static_cast<double>(scores.size());
  double var = 0;
  for (double s : scores) var += (s - m) * (s - m);
  return {m, std::sqrt(var / static_cast<double>(scores.size()))};
}

template <typename S>
struct GaussianStats {
  Eigen::Matrix<S, Eigen::Dynamic, 1> mean;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> cov;
};

/// Sample mean and unbiased covariance of feature rows.
template <typename Derived>
GaussianStats<typename Derived::Scalar> gaussian_stats(const Eigen::MatrixBase<Derived>& features) {
  using S = typename Derived::Scalar;
  if (features.rows() < 2) throw std::invalid_argument("gaussian_stats: need at least 2 samples");
  GaussianStats<S> g;
  g.mean = features.colwise().mean().transpose();
  const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> centered = features.rowwise() - g.mean.transpose();
  g.cov = (centered.adjoint() * centered) / static_cast<S>(features.rows() - 1);
  return g;
}

namespace detail {

template <typename M>
bool is_diagonal(const M& a) {
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (i != j && a(i, j) != 0) return false;
  return true;
}

template <typename S>
using DynMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Square root of a symmetric PSD matrix with negative eigenvalues clamped to 0.
template <typename S>
DynMat<S> sqrtm_psd(const DynMat<S>& a) {
  if (is_diagonal(a)) {
    DynMat<S> out = DynMat<S>::Zero(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, i) = std::sqrt(std::max(a(i, i), S(0)));
    return out;
  }
  Eigen::SelfAdjointEigenSolver<DynMat<S>> es(a);
  if (es.info() != Eigen::Success) throw std::runtime_error("sqrtm: eigendecomposition failed");
  const auto root = es.eigenvalues().cwiseMax(S(0)).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> symmetric_eigenvalues(const DynMat<S>& a) {
  if (is_diagonal(a)) return a.diagonal();
  Eigen::SelfAdjointEigenSolver<DynMat<S>> es(a, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("frechet_distance: eigendecomposition failed");
  return es.eigenvalues();
}

template <typename Derived>
DynMat<typename Derived::Scalar> checked_symmetric(const Eigen::MatrixBase<Derived>& a, const char* name) {
  using S = typename Derived::Scalar;
  if (a.rows() != a.cols()) throw std::invalid_argument(std::string("frechet_distance: ") + name + " is not square");
  const S scale = std::max(S(1), a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > S(1e-6) * scale)
    throw std::invalid_argument(std::string("frechet_distance: ") + name + " is not symmetric");
  return (a + a.transpose()) / S(2);
}

}  // namespace detail

/// Fréchet distance between N(mu1, sigma1) and N(mu2, sigma2).
/// tr((sigma1 sigma2)^{1/2}) is computed as the sum of square roots of the
/// eigenvalues of the symmetric sqrt(sigma1) sigma2 sqrt(sigma1).
template <typename D1, typename D2, typename D3, typename D4>
typename D1::Scalar frechet_distance(const Eigen::MatrixBase<D1>& mu1, const Eigen::MatrixBase<D2>& sigma1,
                                     const Eigen::MatrixBase<D3>& mu2, const Eigen::MatrixBase<D4>& sigma2) {
  using S = typename D1::Scalar;
  using M = detail::DynMat<S>;
  if (mu1.size() != mu2.size() || sigma1.rows() != mu1.size() || sigma2.rows() != mu2.size())
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  M s1 = detail::checked_symmetric(sigma1, "sigma1");
  M s2 = detail::checked_symmetric(sigma2, "sigma2");

  S tr_covmean = 0;
  for (int attempt = 0;; ++attempt) {
    const M root1 = detail::sqrtm_psd<S>(s1);
    M inner = root1 * s2 * root1;
    inner = (inner + inner.transpose()).eval() / S(2);
    const auto lambda = detail::symmetric_eigenvalues<S>(inner);
    const S floor = S(-1e-6) * std::max(S(1), lambda.cwiseAbs().maxCoeff());
    if (lambda.minCoeff() >= floor && lambda.allFinite()) {
      tr_covmean = lambda.cwiseMax(S(0)).cwiseSqrt().sum();
      break;
    }
    if (attempt == 1) throw std::runtime_error("frechet_distance: covariance square root failed after regularization");
    s1.diagonal().array() += S(1e-6);
    s2.diagonal().array() += S(1e-6);
  }
  return (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - S(2) * tr_covmean;
}

/// Maps an image in [-1, 1] to a feature vector and a class distribution.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual Eigen::VectorXd embed(const Plane& image) const = 0;
  [[nodiscard]] virtual Eigen::VectorXd classify(const Plane& image) const = 0;
};

/// Deterministic stand-in for a pretrained network: the image is resized to
/// 16x16 and passed through fixed seeded random projections (tanh features,
/// softmax logits).
class StubExtractor final : public FeatureExtractor {
 public:
  explicit StubExtractor(std::uint64_t seed = 0);
  [[nodiscard]] std::string name() const override { return "stub"; }
  [[nodiscard]] Eigen::VectorXd embed(const Plane& image) const override;
  [[nodiscard]] Eigen::VectorXd classify(const Plane& image) const override;

  static constexpr int kInputSide = 16;

 private:
  [[nodiscard]] Eigen::VectorXd input_vector(const Plane& image) const;
  Eigen::MatrixXd w_embed_, w_class_;
  Eigen::VectorXd b_embed_;
};

/// Mean brightness replicated into every feature; uniform class distribution.
class BrightnessExtractor final : public FeatureExtractor {
 public:
  [[nodiscard]] std::string name() const override { return "brightness"; }
  [[nodiscard]] Eigen::VectorXd embed(const Plane& image) const override;
  [[nodiscard]] Eigen::VectorXd classify(const Plane& image) const override;
};

/// Features (N x 2048) and probabilities (N x 1000) of an image list.
struct ExtractedFeatures {
  Eigen::MatrixXd features;
  Eigen::MatrixXd probs;
};
ExtractedFeatures extract(const FeatureExtractor& extractor, const std::vector<const Plane*>& images);

struct GenEvalRow {
  std::string variant;
  std::string cls;  ///< healthy, unhealthy, or both
  int fold_id = 0;
  int n_synthetic = 0;
  int n_real = 0;
  std::optional<double> is_mean, is_std, fid;
};

struct GenEvalAggregate {
  std::string variant;
  std::string cls;
  std::optional<Interval> is_mean, fid;
};

struct GenEvalReport {
  std::vector<GenEvalRow> rows;
  std::vector<GenEvalAggregate> aggregates;
};

struct LabeledImage {
  const Plane* image = nullptr;
  ClassLabel label = ClassLabel::healthy;
};

/// IS of the synthetic set and FID against the fold's validation images, per
/// intended class and pooled. Subgroups with too few images are left empty.
std::vector<GenEvalRow> evaluate_synthetic(const SyntheticSet& set, const std::vector<LabeledImage>& validation,
                                           const FeatureExtractor& extractor, int n_splits = 10);

/// Mean and 95% t-interval across folds per (variant, class).
std::vector<GenEvalAggregate> aggregate_folds(const std::vector<GenEvalRow>& rows);

/// variant,class,fold,n_synthetic,n_real,IS_mean,IS_std,FID,IS_ci_lo,IS_ci_hi,FID_ci_lo,FID_ci_hi
std::string report_csv(const GenEvalReport& report);

}  // namespace liverdiff

namespace liverdiff {

/// FID computed directly from two feature matrices (rows are samples). With
/// A_i the centered rows scaled by 1/sqrt(N_i - 1), tr((S1 S2)^{1/2}) equals
/// the nuclear norm of A1 A2^T, so no D x D matrix is formed.
template <typename D1, typename D2>
typename D1::Scalar frechet_distance_from_features(const Eigen::MatrixBase<D1>& x1, const Eigen::MatrixBase<D2>& x2) {
  using S = typename D1::Scalar;
  using M = detail::DynMat<S>;
  if (x1.rows() < 2 || x2.rows() < 2) throw std::invalid_argument("frechet_distance: need at least 2 samples per set");
  if (x1.cols() != x2.cols()) throw std::invalid_argument("frechet_distance: feature dimension mismatch");
  const auto mu1 = x1.colwise().mean();
  const auto mu2 = x2.colwise().mean();
  const M a1 = (x1.rowwise() - mu1) / std::sqrt(static_cast<S>(x1.rows() - 1));
  const M a2 = (x2.rowwise() - mu2) / std::sqrt(static_cast<S>(x2.rows() - 1));
  const M cross = a1 * a2.transpose();
  Eigen::BDCSVD<M> svd(cross);
  const S tr_covmean = svd.singularValues().sum();
  return (mu1 - mu2).squaredNorm() + a1.squaredNorm() + a2.squaredNorm() - S(2) * tr_covmean;
}

}  // namespace liverdiff
