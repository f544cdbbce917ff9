#ifndef VERISIEVE_EMBEDDING_HPP
#define VERISIEVE_EMBEDDING_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "verisieve/error.hpp"

namespace verisieve {

inline constexpr Eigen::Index kDefaultDimension = 128;

/// A face embedding: a dense column vector of feature coordinates.
template <typename Scalar>
using Embedding = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using SquareMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = Embedding<double>;
using Matrix = SquareMatrix<double>;

/// An embedding paired with its identity or image label.
struct LabeledEmbedding {
  std::string id;
  Vector embedding;

  friend bool operator==(const LabeledEmbedding& a, const LabeledEmbedding& b) {
    return a.id == b.id && a.embedding.size() == b.embedding.size() && a.embedding == b.embedding;
  }
};

namespace detail {

inline void require_same_dimension(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": dimension mismatch (" +
                                                  std::to_string(a) + " vs " + std::to_string(b) +
                                                  ")");
  }
}

}  // namespace detail

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& v) {
  return v.allFinite();
}

/// Euclidean (Frobenius) norm of a - b.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar frobenius_distance(const Eigen::MatrixBase<DerivedA>& a,
                                             const Eigen::MatrixBase<DerivedB>& b) {
  detail::require_same_dimension(a.size(), b.size(), "frobenius_distance");
  return (a - b).norm();
}

template <typename Derived>
Embedding<typename Derived::Scalar> normalize(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const Scalar n = a.norm();
  if (!(n > Scalar(0))) {
    throw Error(ErrorCode::ZeroNorm, "cannot normalize zero embedding");
  }
  if (!std::isfinite(n)) {
    throw Error(ErrorCode::NonFiniteValue, "cannot normalize non-finite embedding");
  }
  return a / n;
}

/// Mean and regularized covariance of a reference embedding set.
///
/// The covariance is factored once (LDLT) at construction; every distance
/// evaluation is a triangular solve against that factor. Construction fails
/// with NotPositiveDefinite when the factor has a nonpositive pivot.
template <typename Scalar>
class CovarianceModel {
 public:
  using VectorType = Embedding<Scalar>;
  using MatrixType = SquareMatrix<Scalar>;

  CovarianceModel(VectorType mean, MatrixType covariance, Scalar ridge, Eigen::Index sample_count)
      : mean_(std::move(mean)),
        covariance_(std::move(covariance)),
        ridge_(ridge),
        sample_count_(sample_count) {
    if (covariance_.rows() != covariance_.cols()) {
      throw Error(ErrorCode::InvalidArgument, "covariance must be square");
    }
    detail::require_same_dimension(mean_.size(), covariance_.rows(), "CovarianceModel");
    if (sample_count_ < 2) {
      throw Error(ErrorCode::InsufficientSamples, "covariance model needs sample_count >= 2");
    }
    if (!(ridge_ >= Scalar(0))) {
      throw Error(ErrorCode::InvalidArgument, "ridge must be nonnegative");
    }
    if (!mean_.allFinite() || !covariance_.allFinite()) {
      throw Error(ErrorCode::NonFiniteValue, "covariance model has non-finite entries");
    }
    const Scalar scale = std::max(Scalar(1), covariance_.cwiseAbs().maxCoeff());
    if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * scale) {
      throw Error(ErrorCode::InvalidArgument, "covariance must be symmetric");
    }
    factor_.compute(covariance_);
    const Scalar smallest_pivot = factor_.vectorD().minCoeff();
    if (factor_.info() != Eigen::Success || !(smallest_pivot > Scalar(0))) {
      throw Error(ErrorCode::NotPositiveDefinite,
                  "covariance is not positive definite (smallest pivot " +
                      std::to_string(static_cast<double>(smallest_pivot)) + ")");
    }
  }

  const VectorType& mean() const { return mean_; }
  const MatrixType& covariance() const { return covariance_; }
  Scalar ridge() const { return ridge_; }
  Eigen::Index sample_count() const { return sample_count_; }
  Eigen::Index dimension() const { return mean_.size(); }

  /// diff' * inv(covariance) * diff without forming the inverse.
  template <typename Derived>
  Scalar squared_norm(const Eigen::MatrixBase<Derived>& diff) const {
    detail::require_same_dimension(diff.size(), dimension(), "mahalanobis");
    return diff.dot(factor_.solve(diff));
  }

  /// inv(covariance) * v.
  template <typename Derived>
  VectorType solve(const Eigen::MatrixBase<Derived>& v) const {
    return factor_.solve(v);
  }

 private:
  VectorType mean_;
  MatrixType covariance_;
  Scalar ridge_;
  Eigen::Index sample_count_;
  Eigen::LDLT<MatrixType> factor_;
};

/// Sample mean and unbiased covariance plus a trace-scaled ridge:
/// Sigma = S + lambda * I, lambda = ridge_fraction * trace(S) / d
/// (lambda = ridge_fraction when trace(S) is zero).
template <typename Scalar>
CovarianceModel<Scalar> estimate_covariance(std::span<const Embedding<Scalar>> samples,
                                            Scalar ridge_fraction = Scalar(1e-3)) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::InsufficientSamples,
                "estimate_covariance needs at least 2 samples, got " +
                    std::to_string(samples.size()));
  }
  if (!(ridge_fraction >= Scalar(0))) {
    throw Error(ErrorCode::InvalidArgument, "ridge_fraction must be nonnegative");
  }
  const Eigen::Index d = samples.front().size();
  const auto n = static_cast<Eigen::Index>(samples.size());
  SquareMatrix<Scalar> centered(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& s = samples[static_cast<std::size_t>(j)];
    detail::require_same_dimension(s.size(), d, "estimate_covariance");
    if (!s.allFinite()) {
      throw Error(ErrorCode::NonFiniteValue, "estimate_covariance: non-finite sample");
    }
    centered.col(j) = s;
  }
  Embedding<Scalar> mean = centered.rowwise().mean();
  centered.colwise() -= mean;
  SquareMatrix<Scalar> cov = (centered * centered.transpose()) / Scalar(n - 1);
  cov = Scalar(0.5) * (cov + cov.transpose()).eval();

  const Scalar trace = cov.trace();
  const Scalar ridge = trace > Scalar(0) ? ridge_fraction * trace / Scalar(d) : ridge_fraction;
  cov.diagonal().array() += ridge;
  return CovarianceModel<Scalar>(std::move(mean), std::move(cov), ridge, n);
}

template <typename Scalar>
CovarianceModel<Scalar> estimate_covariance(const std::vector<Embedding<Scalar>>& samples,
                                            Scalar ridge_fraction = Scalar(1e-3)) {
  return estimate_covariance(std::span<const Embedding<Scalar>>(samples), ridge_fraction);
}

/// Delta = sqrt((a-b)' inv(Sigma) (a-b)).
template <typename Scalar, typename DerivedA, typename DerivedB>
Scalar mahalanobis_distance(const Eigen::MatrixBase<DerivedA>& a,
                            const Eigen::MatrixBase<DerivedB>& b,
                            const CovarianceModel<Scalar>& model) {
  detail::require_same_dimension(a.size(), b.size(), "mahalanobis_distance");
  const Embedding<Scalar> diff = a - b;
  return std::sqrt(std::max(Scalar(0), model.squared_norm(diff)));
}

/// Distance of a probe to the reference set's mean under the set's covariance.
template <typename Scalar, typename Derived>
Scalar mahalanobis_to_set(const Eigen::MatrixBase<Derived>& x, const CovarianceModel<Scalar>& model) {
  return mahalanobis_distance(x, model.mean(), model);
}

/// Mean of the probe's Mahalanobis distance to every reference sample.
template <typename Scalar, typename Derived>
Scalar md_mean_pairwise(const Eigen::MatrixBase<Derived>& x,
                        std::span<const Embedding<Scalar>> samples,
                        const CovarianceModel<Scalar>& model) {
  if (samples.empty()) {
    throw Error(ErrorCode::InsufficientSamples, "md_mean_pairwise needs reference samples");
  }
  Scalar total(0);
  for (const auto& s : samples) total += mahalanobis_distance(x, s, model);
  return total / Scalar(samples.size());
}

}  // namespace verisieve

#endif  // VERISIEVE_EMBEDDING_HPP
