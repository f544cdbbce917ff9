// Test-only oracles and generators. Nothing here calls into the code under
// test except where a test explicitly composes the two.
#ifndef VERISIEVE_TESTS_SUPPORT_HPP
#define VERISIEVE_TESTS_SUPPORT_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "verisieve/embedding.hpp"

namespace verisieve::testing {

using LongVector = std::vector<long double>;
using LongMatrix = std::vector<LongVector>;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double gauss() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  Vector gaussian(Eigen::Index d) {
    Vector v(d);
    for (Eigen::Index k = 0; k < d; ++k) v(k) = gauss();
    return v;
  }

  Vector unit(Eigen::Index d) {
    Vector v = gaussian(d);
    return v / v.norm();
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline long double oracle_distance(const Vector& a, const Vector& b) {
  long double sum = 0.0L;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const long double diff = static_cast<long double>(a(k)) - static_cast<long double>(b(k));
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

inline LongVector oracle_mean(const std::vector<Vector>& samples) {
  const auto d = static_cast<std::size_t>(samples.front().size());
  LongVector mean(d, 0.0L);
  for (const auto& s : samples)
    for (std::size_t k = 0; k < d; ++k) mean[k] += s(static_cast<Eigen::Index>(k));
  for (auto& m : mean) m /= static_cast<long double>(samples.size());
  return mean;
}

/// Two-pass unbiased covariance in long double.
inline LongMatrix oracle_covariance(const std::vector<Vector>& samples) {
  const auto d = static_cast<std::size_t>(samples.front().size());
  const LongVector mean = oracle_mean(samples);
  LongMatrix cov(d, LongVector(d, 0.0L));
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < d; ++i) {
      const long double di = s(static_cast<Eigen::Index>(i)) - mean[i];
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += di * (s(static_cast<Eigen::Index>(j)) - mean[j]);
    }
  }
  for (auto& row : cov)
    for (auto& v : row) v /= static_cast<long double>(samples.size() - 1);
  return cov;
}

/// Solves A x = b by Gaussian elimination with partial pivoting in long double.
inline LongVector oracle_solve(LongMatrix a, LongVector b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (a[pivot][col] == 0.0L) throw std::runtime_error("oracle_solve: singular");
    std::swap(a[pivot], a[col]);
    std::swap(b[pivot], b[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const long double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  LongVector x(n);
  for (std::size_t i = n; i-- > 0;) {
    long double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
    x[i] = s / a[i][i];
  }
  return x;
}

inline LongMatrix to_long(const Matrix& m) {
  LongMatrix out(static_cast<std::size_t>(m.rows()), LongVector(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

/// sqrt(diff' inv(cov) diff) through the explicit dense solve.
inline long double oracle_mahalanobis(const Vector& a, const Vector& b, const Matrix& cov) {
  LongVector diff(static_cast<std::size_t>(a.size()));
  for (Eigen::Index k = 0; k < a.size(); ++k)
    diff[k] = static_cast<long double>(a(k)) - static_cast<long double>(b(k));
  const LongVector x = oracle_solve(to_long(cov), diff);
  long double q = 0.0L;
  for (std::size_t k = 0; k < diff.size(); ++k) q += diff[k] * x[k];
  return std::sqrt(q);
}

inline double relative_error(long double value, long double reference) {
  const long double scale = std::max(std::fabs(reference), 1e-300L);
  return static_cast<double>(std::fabs(value - reference) / scale);
}

/// Random covariance with a controlled spectrum: Q diag(lambda) Q'.
inline Matrix random_spd(Rng& rng, Eigen::Index d, double min_eig, double max_eig) {
  const Eigen::HouseholderQR<Matrix> qr(Matrix::NullaryExpr(d, d, [&] { return rng.gauss(); }));
  const Matrix q = qr.householderQ();
  Vector lambda(d);
  for (Eigen::Index k = 0; k < d; ++k) lambda(k) = rng.uniform(min_eig, max_eig);
  Matrix m = q * lambda.asDiagonal() * q.transpose();
  return 0.5 * (m + m.transpose());
}

}  // namespace verisieve::testing

#endif  // VERISIEVE_TESTS_SUPPORT_HPP
