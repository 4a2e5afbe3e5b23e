#pragma once

// Gaussian kernel on R^d, closed-form mean maps of Gaussian mixtures and the
// maximum mean discrepancy between a mixture and a weighted point set.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "skh/errors.hpp"
#include "skh/linalg.hpp"

namespace skh {

struct KernelConfig {
  double sigma2 = 1.0;  ///< bandwidth, squared state units
  int dim = 1;

  void validate() const {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw UsageError("kernel sigma2 must be positive");
    if (dim < 1) throw UsageError("kernel dimension must be >= 1");
  }
};

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  std::size_t size() const { return weights.size(); }

  void add(double weight, Vector mean, Matrix cov) {
    weights.push_back(weight);
    means.push_back(std::move(mean));
    covariances.push_back(std::move(cov));
  }

  static GaussianMixture single(Vector mean, Matrix cov) {
    GaussianMixture p;
    p.add(1.0, std::move(mean), std::move(cov));
    return p;
  }

  /// Point mass at `x` (zero covariance).
  static GaussianMixture point_mass(const Vector& x) {
    return single(x, Matrix::Zero(x.size(), x.size()));
  }

  Vector mean() const {
    Vector m = Vector::Zero(dim());
    for (std::size_t i = 0; i < size(); ++i) m += weights[i] * means[i];
    return m;
  }

  Matrix covariance() const {
    const Vector m = mean();
    Matrix c = Matrix::Zero(dim(), dim());
    for (std::size_t i = 0; i < size(); ++i) {
      const Vector dm = means[i] - m;
      c += weights[i] * (covariances[i] + dm * dm.transpose());
    }
    return c;
  }

  void validate() const {
    if (weights.empty()) throw UsageError("mixture has no components");
    if (means.size() != weights.size() || covariances.size() != weights.size()) {
      throw UsageError("mixture weights, means and covariances differ in length");
    }
    const int d = dim();
    if (d < 1) throw UsageError("mixture dimension must be >= 1");
    double total = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (!(weights[i] >= 0.0)) throw UsageError("mixture weight is negative or NaN");
      total += weights[i];
      if (means[i].size() != d) throw UsageError("mixture components disagree on dimension");
      const Matrix& c = covariances[i];
      if (c.rows() != d || c.cols() != d) throw UsageError("covariance shape does not match dimension");
      const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
      if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw UsageError("covariance is not symmetric");
      }
      if (!c.isZero(0.0)) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(c), Eigen::EigenvaluesOnly);
        if (eig.eigenvalues().minCoeff() < -1e-10 * scale) {
          throw UsageError("covariance is not positive semidefinite");
        }
      }
    }
    if (std::abs(total - 1.0) > 1e-12) throw UsageError("mixture weights do not sum to 1");
  }
};

/// Weighted atoms; columns of `points` are the particle locations.
struct WeightedParticleSet {
  Matrix points;                ///< d x n
  Vector weights;               ///< n
  std::vector<int> ancestry;    ///< optional: component / parent index per particle
  std::vector<int> modes;       ///< optional: discrete label carried with each particle

  int dim() const { return static_cast<int>(points.rows()); }
  int size() const { return static_cast<int>(points.cols()); }

  Vector mean() const { return points * weights; }

  void validate(int parent_count = -1) const {
    if (weights.size() != points.cols()) throw UsageError("particle points and weights differ in length");
    if (size() == 0) throw UsageError("empty particle set");
    if ((weights.array() < 0.0).any() || !weights.allFinite()) throw UsageError("negative particle weight");
    if (std::abs(weights.sum() - 1.0) > 1e-12) throw UsageError("particle weights do not sum to 1");
    if (!ancestry.empty()) {
      if (static_cast<int>(ancestry.size()) != size()) throw UsageError("ancestry length mismatch");
      for (int a : ancestry) {
        if (a < 0 || (parent_count >= 0 && a >= parent_count)) throw UsageError("ancestry index out of range");
      }
    }
  }
};

inline void check_dims(const GaussianMixture& p, const KernelConfig& k) {
  if (p.dim() != k.dim) {
    throw UsageError("dimension mismatch: mixture has d=" + std::to_string(p.dim()) +
                     ", kernel has d=" + std::to_string(k.dim));
  }
}

/// exp(-||x - y||^2 / (2 sigma2))
inline double kernel_eval(const Vector& x, const Vector& y, const KernelConfig& k) {
  if (x.size() != k.dim || y.size() != k.dim) throw UsageError("kernel_eval: dimension mismatch");
  return std::exp(-(x - y).squaredNorm() / (2.0 * k.sigma2));
}

/// Kernel values between `x` and each column of `points`.
inline Vector kernel_row(const Vector& x, const Matrix& points, const KernelConfig& k) {
  const double scale = -0.5 / k.sigma2;
  Vector out(points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    out[j] = std::exp(scale * (points.col(j) - x).squaredNorm());
  }
  return out;
}

inline Matrix gram_matrix(const Matrix& points, const KernelConfig& k) {
  const Eigen::Index n = points.cols();
  Matrix g(n, n);
  const double scale = -0.5 / k.sigma2;
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      g(i, j) = g(j, i) = std::exp(scale * (points.col(i) - points.col(j)).squaredNorm());
    }
  }
  return g;
}

/// Closed-form mean element of a Gaussian mixture under the Gaussian kernel,
///   mu_p(x) = sum_i pi_i (sqrt(2 pi) sigma)^d N(x | m_i, S_i + sigma2 I).
/// Components sharing a covariance are grouped so each distinct covariance is
/// factored once; batch evaluation whitens the query points per group.
class MeanMap {
 public:
  MeanMap(const GaussianMixture& p, const KernelConfig& k) : sigma2_(k.sigma2), dim_(k.dim) {
    k.validate();
    check_dims(p, k);
    std::vector<const Matrix*> reps;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.weights[i] == 0.0) continue;
      std::size_t g = 0;
      for (; g < reps.size(); ++g) {
        if (*reps[g] == p.covariances[i]) break;
      }
      if (g == reps.size()) {
        reps.push_back(&p.covariances[i]);
        groups_.push_back(make_group(p.covariances[i]));
      }
      groups_[g].members.push_back(i);
    }
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      Group& grp = groups_[g];
      const auto n = static_cast<Eigen::Index>(grp.members.size());
      grp.raw_means.resize(dim_, n);
      grp.coef.resize(n);
      for (Eigen::Index j = 0; j < n; ++j) {
        grp.raw_means.col(j) = p.means[grp.members[j]];
        grp.coef[j] = p.weights[grp.members[j]] * grp.norm;
      }
      grp.white_means = grp.chol.triangularView<Eigen::Lower>().solve(grp.raw_means);
      grp.white_sq = grp.white_means.colwise().squaredNorm().transpose();
      grp.covariance = *reps[g];
    }
  }

  int dim() const { return dim_; }

  double operator()(const Vector& x) const {
    if (x.size() != dim_) throw UsageError("mean map: dimension mismatch");
    double total = 0.0;
    for (const Group& grp : groups_) {
      const Vector wx = grp.chol.triangularView<Eigen::Lower>().solve(x);
      for (Eigen::Index j = 0; j < grp.white_means.cols(); ++j) {
        total += grp.coef[j] * std::exp(-0.5 * (grp.white_means.col(j) - wx).squaredNorm());
      }
    }
    return total;
  }

  /// mu_p at every column of `points`.
  Vector evaluate(const Matrix& points) const {
    if (points.rows() != dim_) throw UsageError("mean map: dimension mismatch");
    const Eigen::Index n = points.cols();
    Vector out = Vector::Zero(n);
    constexpr Eigen::Index kChunk = 512;
    for (const Group& grp : groups_) {
      for (Eigen::Index start = 0; start < n; start += kChunk) {
        const Eigen::Index len = std::min(kChunk, n - start);
        const Matrix wx = grp.chol.triangularView<Eigen::Lower>().solve(points.middleCols(start, len));
        const Vector wx_sq = wx.colwise().squaredNorm().transpose();
        Matrix dist = -2.0 * (wx.transpose() * grp.white_means);
        dist.colwise() += wx_sq;
        dist.rowwise() += grp.white_sq.transpose();
        out.segment(start, len) += (-0.5 * dist.array().max(0.0)).exp().matrix() * grp.coef;
      }
    }
    return out;
  }

  /// ||mu_p||^2 = sum_ij pi_i pi_j (sqrt(2 pi) sigma)^d N(m_i | m_j, S_i + S_j + sigma2 I).
  double squared_norm() const {
    double total = 0.0;
    for (std::size_t a = 0; a < groups_.size(); ++a) {
      for (std::size_t b = a; b < groups_.size(); ++b) {
        const double factor = (a == b) ? 1.0 : 2.0;
        total += factor * cross_term(groups_[a], groups_[b]);
      }
    }
    return total;
  }

 private:
  struct Group {
    Matrix covariance;
    Matrix chol;  ///< lower factor of covariance + sigma2 I
    double norm = 0.0;
    std::vector<std::size_t> members;
    Matrix raw_means;
    Matrix white_means;
    Vector white_sq;
    Vector coef;  ///< pi_i * norm
  };

  Group make_group(const Matrix& cov) const {
    Group g;
    Matrix s = cov;
    s.diagonal().array() += sigma2_;
    g.chol = cholesky_lower(s);
    g.norm = normalizer(g.chol);
    return g;
  }

  // (sqrt(2 pi) sigma)^d / ((2 pi)^{d/2} det L) = sigma^d / det L
  double normalizer(const Matrix& chol) const {
    const double log_det = chol.diagonal().array().log().sum();
    return std::exp(0.5 * dim_ * std::log(sigma2_) - log_det);
  }

  double cross_term(const Group& a, const Group& b) const {
    Matrix s = a.covariance + b.covariance;
    s.diagonal().array() += sigma2_;
    const Matrix l = cholesky_lower(s);
    const double norm = normalizer(l);
    const Matrix wa = l.triangularView<Eigen::Lower>().solve(a.raw_means);
    const Matrix wb = l.triangularView<Eigen::Lower>().solve(b.raw_means);
    const Vector pa = a.coef / a.norm;
    const Vector pb = b.coef / b.norm;
    double total = 0.0;
    for (Eigen::Index i = 0; i < wa.cols(); ++i) {
      double row = 0.0;
      for (Eigen::Index j = 0; j < wb.cols(); ++j) {
        row += pb[j] * std::exp(-0.5 * (wa.col(i) - wb.col(j)).squaredNorm());
      }
      total += pa[i] * row;
    }
    return norm * total;
  }

  double sigma2_;
  int dim_;
  std::vector<Group> groups_;
};

inline double mean_map_eval(const GaussianMixture& p, const Vector& x, const KernelConfig& k) {
  return MeanMap(p, k)(x);
}

inline double mean_map_sqnorm(const GaussianMixture& p, const KernelConfig& k) {
  return MeanMap(p, k).squared_norm();
}

/// Squared RKHS norm of sum_i w_i Phi(x_i).
inline double embedding_sqnorm(const WeightedParticleSet& q, const KernelConfig& k) {
  const double scale = -0.5 / k.sigma2;
  double total = 0.0;
  for (int i = 0; i < q.size(); ++i) {
    double row = 0.0;
    for (int j = i + 1; j < q.size(); ++j) {
      row += q.weights[j] * std::exp(scale * (q.points.col(i) - q.points.col(j)).squaredNorm());
    }
    total += q.weights[i] * (q.weights[i] + 2.0 * row);
  }
  return total;
}

/// MMD from a precomputed mean map; avoids refactoring the mixture.
inline double mmd(const MeanMap& mu, double mu_sqnorm, const WeightedParticleSet& q, const KernelConfig& k) {
  if (q.dim() != k.dim || mu.dim() != k.dim) throw UsageError("mmd: dimension mismatch");
  const double cross = q.weights.dot(mu.evaluate(q.points));
  const double radicand = mu_sqnorm - 2.0 * cross + embedding_sqnorm(q, k);
  if (radicand < -1e-10) {
    throw NumericalError("mmd: negative squared distance " + std::to_string(radicand));
  }
  return std::sqrt(std::max(radicand, 0.0));
}

inline double mmd(const GaussianMixture& p, const WeightedParticleSet& q, const KernelConfig& k) {
  const MeanMap mu(p, k);
  return mmd(mu, mu.squared_norm(), q, k);
}

/// Upper bound on E||mu(p_hat) - mu(p)||^2 for an N-sample Monte Carlo draw
/// (R = 1 for the Gaussian kernel).
inline double mc_mean_map_bound(const GaussianMixture& p, const KernelConfig& k, int n) {
  if (n < 1) throw UsageError("mc_mean_map_bound: N must be >= 1");
  return (1.0 - mean_map_sqnorm(p, k)) / static_cast<double>(n);
}

}  // namespace skh
