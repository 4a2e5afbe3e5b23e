#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <string>

#include "skh/errors.hpp"

namespace skh {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Lower Cholesky factor of a symmetric positive-definite matrix. On failure
/// a jitter of 1e-12 * trace / d is added to the diagonal and the
/// factorization retried once.
inline Matrix cholesky_lower(const Matrix& s) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const double jitter = 1e-12 * std::max(s.trace(), 0.0) / static_cast<double>(s.rows());
  Matrix shifted = s;
  shifted.diagonal().array() += jitter;
  llt.compute(shifted);
  if (llt.info() != Eigen::Success || jitter == 0.0) {
    throw NumericalError("Cholesky factorization failed on a " + std::to_string(s.rows()) + "x" +
                         std::to_string(s.cols()) + " matrix");
  }
  return llt.matrixL();
}

/// A factor L with L L^T = s for symmetric positive-semidefinite s (used for
/// sampling). Singular and zero matrices are allowed.
inline Matrix psd_factor(const Matrix& s) {
  if (s.isZero(0.0)) return Matrix::Zero(s.rows(), s.cols());
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(s));
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw NumericalError("covariance is not positive semidefinite");
  }
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

/// log N(x | mean, cov) for positive-definite cov.
inline double log_gaussian_pdf(const Vector& x, const Vector& mean, const Matrix& cov) {
  const Matrix l = cholesky_lower(cov);
  const Vector z = l.triangularView<Eigen::Lower>().solve(x - mean);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + log_det + z.squaredNorm());
}

/// log(sum(exp(v))) without overflow.
template <typename Range>
double log_sum_exp(const Range& values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

}  // namespace skh
