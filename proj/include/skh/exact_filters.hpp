#pragma once

// Reference filters: Kalman filter for linear Gaussian models, exhaustive
// mixture of Kalman filters over mode histories for the jump Markov system,
// and trapezoid-rule grid filtering for scalar models.

#include <cmath>
#include <string>
#include <vector>

#include "skh/errors.hpp"
#include "skh/linalg.hpp"
#include "skh/ssm.hpp"

namespace skh {

struct GaussianBelief {
  Vector mean;
  Matrix cov;
  double log_evidence = 0.0;  ///< accumulated log p(y_{1:t})
};

inline GaussianBelief kalman_predict(const GaussianBelief& b, const Matrix& a, const Matrix& q) {
  return {a * b.mean, symmetrized(a * b.cov * a.transpose() + q), b.log_evidence};
}

/// Measurement update in Joseph form; adds log N(y | C m, C P C^T + R) to the
/// evidence.
inline GaussianBelief kalman_update(const GaussianBelief& prior, const Matrix& c, const Matrix& r, const Vector& y,
                                    const Vector& offset = Vector()) {
  const Vector predicted_y = offset.size() ? Vector(c * prior.mean + offset) : Vector(c * prior.mean);
  const Matrix s = symmetrized(c * prior.cov * c.transpose() + r);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw NumericalError("innovation covariance is not positive definite");
  const Vector innov = y - predicted_y;
  const Matrix l = llt.matrixL();
  const Vector z = l.triangularView<Eigen::Lower>().solve(innov);
  const double log_lik =
      -0.5 * (static_cast<double>(y.size()) * kLog2Pi + 2.0 * l.diagonal().array().log().sum() + z.squaredNorm());
  const Matrix gain = llt.solve(c * prior.cov).transpose();
  const Matrix ikc = Matrix::Identity(prior.cov.rows(), prior.cov.cols()) - gain * c;
  GaussianBelief post;
  post.mean = prior.mean + gain * innov;
  post.cov = ikc * prior.cov * ikc.transpose() + gain * r * gain.transpose();
  post.cov = symmetrized(post.cov);
  // clip tiny negative eigenvalues from round-off
  Eigen::SelfAdjointEigenSolver<Matrix> eig(post.cov);
  if (eig.eigenvalues().minCoeff() < 0.0) {
    if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff())) {
      throw NumericalError("posterior covariance lost positive semidefiniteness");
    }
    post.cov = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).asDiagonal() * eig.eigenvectors().transpose();
  }
  post.log_evidence = prior.log_evidence + log_lik;
  return post;
}

/// Predict with (A, Q) then update with y.
inline GaussianBelief kalman_step(const GaussianBelief& belief, const LgssParams& p, const Vector& y) {
  if (y.size() != p.dim_y() || belief.mean.size() != p.dim_x()) throw UsageError("kalman_step: dimension mismatch");
  return kalman_update(kalman_predict(belief, p.A, p.Q), p.C, p.R, y);
}

struct KalmanRun {
  std::vector<GaussianBelief> predicted;  ///< p(x_t | y_{1:t-1})
  std::vector<GaussianBelief> filtered;   ///< p(x_t | y_{1:t})
  double log_evidence() const { return filtered.back().log_evidence; }
};

inline KalmanRun kalman_filter(const LgssParams& p, const std::vector<Vector>& ys) {
  KalmanRun run;
  GaussianBelief prior{p.x1_mean, p.x1_cov, 0.0};
  for (std::size_t t = 0; t < ys.size(); ++t) {
    if (t > 0) prior = kalman_predict(run.filtered.back(), p.A, p.Q);
    run.predicted.push_back(prior);
    run.filtered.push_back(kalman_update(prior, p.C, p.R, ys[t]));
  }
  return run;
}

// ---------------------------------------------------------------------------

struct KalmanBranch {
  double log_weight = 0.0;  ///< unnormalized
  GaussianBelief belief;     ///< filtered, given the mode history
  std::vector<int> history;  ///< r_1 .. r_t
};

struct MixtureMoments {
  Vector mean;
  Matrix cov;
};

struct JmlsExactResult {
  std::vector<MixtureMoments> filtered;
  std::vector<std::size_t> branch_counts;
  double log_evidence = 0.0;
  std::vector<KalmanBranch> final_branches;  ///< normalized log-weights
};

inline constexpr std::size_t kMaxKalmanBranches = std::size_t{1} << 20;

/// Exact filtering for the jump Markov system: one Kalman filter per mode
/// history, K^t branches at time t. No pruning.
inline JmlsExactResult jmls_exact_filter(const JmlsParams& p, const std::vector<Vector>& ys) {
  const std::size_t k = p.modes.size();
  double total = 1.0;
  for (std::size_t t = 0; t < ys.size(); ++t) total *= static_cast<double>(k);
  if (total > static_cast<double>(kMaxKalmanBranches)) {
    throw UsageError("jmls_exact_filter: " + std::to_string(ys.size()) + " steps exceed the branch cap of 2^20");
  }
  JmlsExactResult out;
  std::vector<KalmanBranch> branches;
  const GaussianBelief prior{p.x1_mean, p.x1_cov, 0.0};
  for (std::size_t t = 0; t < ys.size(); ++t) {
    std::vector<KalmanBranch> next;
    next.reserve(t == 0 ? k : branches.size() * k);
    if (t == 0) {
      for (std::size_t r = 0; r < k; ++r) {
        if (p.initial_mode[r] <= 0.0) continue;
        const JmlsMode& m = p.modes[r];
        GaussianBelief post = kalman_update(prior, m.C, m.G * m.G.transpose(), ys[t]);
        next.push_back({std::log(p.initial_mode[r]) + post.log_evidence, post, {static_cast<int>(r)}});
      }
    } else {
      for (const KalmanBranch& b : branches) {
        const int r_prev = b.history.back();
        const JmlsMode& mp = p.modes[r_prev];
        const GaussianBelief pred = kalman_predict(b.belief, mp.A, mp.F * mp.F.transpose());
        for (std::size_t r = 0; r < k; ++r) {
          const double pi = p.Pi(r_prev, static_cast<Eigen::Index>(r));
          if (pi <= 0.0) continue;
          const JmlsMode& m = p.modes[r];
          GaussianBelief step_prior = pred;
          step_prior.log_evidence = 0.0;
          GaussianBelief post = kalman_update(step_prior, m.C, m.G * m.G.transpose(), ys[t]);
          KalmanBranch nb{b.log_weight + std::log(pi) + post.log_evidence, post, b.history};
          nb.history.push_back(static_cast<int>(r));
          next.push_back(std::move(nb));
        }
      }
    }
    std::vector<double> lw;
    lw.reserve(next.size());
    for (const KalmanBranch& b : next) lw.push_back(b.log_weight);
    const double norm = log_sum_exp(lw);
    out.log_evidence += norm;
    MixtureMoments mom{Vector::Zero(p.dim_x()), Matrix::Zero(p.dim_x(), p.dim_x())};
    for (KalmanBranch& b : next) {
      b.log_weight -= norm;
      mom.mean += std::exp(b.log_weight) * b.belief.mean;
    }
    for (const KalmanBranch& b : next) {
      const Vector dm = b.belief.mean - mom.mean;
      mom.cov += std::exp(b.log_weight) * (b.belief.cov + dm * dm.transpose());
    }
    out.filtered.push_back(mom);
    out.branch_counts.push_back(next.size());
    branches = std::move(next);
  }
  out.final_branches = std::move(branches);
  return out;
}

// ---------------------------------------------------------------------------

struct Grid1d {
  double lo = -10.0;
  double hi = 10.0;
  int points = 2001;

  double step() const { return (hi - lo) / (points - 1); }
  double at(int i) const { return lo + i * step(); }
};

struct GridFilterResult {
  Vector nodes;
  std::vector<Vector> densities;  ///< filtered densities on the nodes
  std::vector<double> means;
  std::vector<double> variances;
  double log_evidence = 0.0;
  bool boundary_warning = false;  ///< some step had > 1e-6 of its mass in the edge cells
};

namespace detail {

inline double trapezoid(const Vector& f, double h) {
  return h * (f.sum() - 0.5 * (f[0] + f[f.size() - 1]));
}

}  // namespace detail

/// Sequential Bayes on a uniform grid with trapezoid quadrature. Transition
/// components narrower than a tenth of the grid spacing are treated as
/// deterministic maps and deposited on the two neighbouring nodes.
inline GridFilterResult grid_filter(const StateSpaceModel& model, const std::vector<Vector>& ys, const Grid1d& grid) {
  if (model.dim_x() != 1 || model.num_modes() != 1) throw UsageError("grid_filter needs a scalar single-mode model");
  if (grid.points < 3 || !(grid.hi > grid.lo)) throw UsageError("grid_filter: invalid grid");
  const int n = grid.points;
  const double h = grid.step();
  GridFilterResult out;
  out.nodes.resize(n);
  for (int i = 0; i < n; ++i) out.nodes[i] = grid.at(i);

  auto mixture_density = [&](const GaussianMixture& mix, Vector& acc, double scale) {
    for (std::size_t c = 0; c < mix.size(); ++c) {
      const double w = scale * mix.weights[c];
      const double m = mix.means[c][0];
      const double var = mix.covariances[c](0, 0);
      if (var < 0.01 * h * h) {
        const double pos = (m - grid.lo) / h;
        const int left = static_cast<int>(std::floor(pos));
        const double frac = pos - left;
        if (left >= 0 && left < n) acc[left] += w * (1.0 - frac) / h;
        if (left + 1 >= 0 && left + 1 < n) acc[left + 1] += w * frac / h;
        continue;
      }
      const double norm = w / std::sqrt(2.0 * std::numbers::pi * var);
      for (int i = 0; i < n; ++i) {
        const double d = out.nodes[i] - m;
        acc[i] += norm * std::exp(-0.5 * d * d / var);
      }
    }
  };

  Vector prior = Vector::Zero(n);
  mixture_density(model.initial().mixture, prior, 1.0);
  for (std::size_t t = 0; t < ys.size(); ++t) {
    const int step = static_cast<int>(t) + 1;
    if (t > 0) {
      const Vector& post = out.densities.back();
      prior.setZero();
      for (int j = 0; j < n; ++j) {
        const double wj = post[j] * h * ((j == 0 || j == n - 1) ? 0.5 : 1.0);
        if (wj < 1e-300) continue;
        mixture_density(model.transition(Vector::Constant(1, out.nodes[j]), 0, step - 1).mixture, prior, wj);
      }
    }
    Vector loglik(n);
    for (int i = 0; i < n; ++i) loglik[i] = model.log_likelihood(Vector::Constant(1, out.nodes[i]), 0, ys[t], step);
    const double shift = loglik.maxCoeff();
    Vector post = prior.array() * (loglik.array() - shift).exp();
    const double mass = detail::trapezoid(post, h);
    if (!(mass > 0.0)) throw NumericalError("grid_filter: posterior mass vanished at t=" + std::to_string(step));
    out.log_evidence += std::log(mass) + shift;
    post /= mass;
    const double edge = 0.5 * h * (post[0] + post[1] + post[n - 2] + post[n - 1]);
    if (edge > 1e-6) out.boundary_warning = true;
    const Vector xf = out.nodes.cwiseProduct(post);
    const double mean = detail::trapezoid(xf, h);
    const double second = detail::trapezoid(Vector(out.nodes.cwiseProduct(xf)), h);
    out.means.push_back(mean);
    out.variances.push_back(second - mean * mean);
    out.densities.push_back(std::move(post));
  }
  return out;
}

}  // namespace skh
