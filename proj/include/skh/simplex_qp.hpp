#pragma once

// Convex quadratic program over the probability simplex,
//   minimize  w^T K w - 2 c^T w   subject to  w >= 0, sum(w) = 1,
// solved by a primal active-set method. Each step solves the
// equality-constrained problem on the current support and moves toward it
// until a weight hits zero; coordinates with the most negative reduced
// gradient are added until the KKT conditions hold.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "skh/errors.hpp"
#include "skh/linalg.hpp"

namespace skh {

struct SimplexQp {
  Matrix gram;    ///< symmetric PSD
  Vector linear;  ///< c

  Eigen::Index size() const { return linear.size(); }

  double objective(const Vector& w) const { return w.dot(gram * w) - 2.0 * linear.dot(w); }
  Vector gradient(const Vector& w) const { return 2.0 * (gram * w - linear); }
};

struct QpSolution {
  Vector weights;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
};

class QpNonConvergence : public NumericalError {
 public:
  QpNonConvergence(const std::string& what, QpSolution best) : NumericalError(what), best_(std::move(best)) {}
  const QpSolution& best() const noexcept { return best_; }

 private:
  QpSolution best_;
};

/// Largest KKT violation of `w`: spread of the gradient over the support and
/// how far any zero coordinate's gradient falls below the support level.
inline double kkt_residual(const SimplexQp& qp, const Vector& w) {
  const Vector g = qp.gradient(w);
  double level = 0.0;
  int support = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0) {
      level += g[i];
      ++support;
    }
  }
  if (support == 0) return std::numeric_limits<double>::infinity();
  level /= support;
  double r = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    r = std::max(r, w[i] > 0.0 ? std::abs(g[i] - level) : level - g[i]);
  }
  return r;
}

namespace detail {

// Minimizer of w^T K w - 2 c^T w on {sum w = 1} restricted to `support`.
inline Vector solve_on_support(const SimplexQp& qp, const std::vector<Eigen::Index>& support) {
  const auto n = static_cast<Eigen::Index>(support.size());
  Matrix k(n, n);
  Vector c(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c[i] = qp.linear[support[i]];
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = qp.gram(support[i], support[j]);
  }
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() == Eigen::Success) {
    const Vector a = llt.solve(c);
    const Vector b = llt.solve(Vector::Ones(n));
    const double denom = b.sum();
    if (std::isfinite(denom) && std::abs(denom) > 1e-300) {
      Vector v = a + ((1.0 - a.sum()) / denom) * b;
      if (v.allFinite()) return v;
    }
  }
  // singular Gram block: least-squares solution of the bordered KKT system
  Matrix kkt = Matrix::Zero(n + 1, n + 1);
  kkt.topLeftCorner(n, n) = k;
  kkt.topRightCorner(n, 1).setOnes();
  kkt.bottomLeftCorner(1, n).setOnes();
  Vector rhs(n + 1);
  rhs.head(n) = c;
  rhs[n] = 1.0;
  const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
  return sol.head(n);
}

}  // namespace detail

/// Solves the simplex QP to KKT residual <= `tol`. `warm_start` must be a
/// point of the simplex when given. Throws QpNonConvergence carrying the best
/// iterate when the iteration cap 10 (n + 1)^2 is reached or progress stalls.
inline QpSolution simplex_qp_solve(const SimplexQp& qp, double tol,
                                   const std::optional<Vector>& warm_start = std::nullopt) {
  const Eigen::Index n = qp.size();
  if (n == 0 || qp.gram.rows() != n || qp.gram.cols() != n) throw UsageError("simplex QP: shape mismatch");

  Vector w;
  if (warm_start) {
    if (warm_start->size() != n) throw UsageError("simplex QP: warm start has wrong size");
    w = warm_start->cwiseMax(0.0);
    if (w.sum() <= 0.0) throw UsageError("simplex QP: warm start is not on the simplex");
    w /= w.sum();
  } else {
    // best vertex
    Eigen::Index best = 0;
    double best_f = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double f = qp.gram(i, i) - 2.0 * qp.linear[i];
      if (f < best_f) {
        best_f = f;
        best = i;
      }
    }
    w = Vector::Zero(n);
    w[best] = 1.0;
  }

  QpSolution best{w, qp.objective(w), kkt_residual(qp, w), 0};
  if (n == 1) return best;

  const long cap = 10L * (n + 1) * (n + 1);
  Eigen::Index just_added = -1;
  for (long iter = 0; iter < cap; ++iter) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < n; ++i)
      if (w[i] > 0.0) support.push_back(i);

    const Vector v = detail::solve_on_support(qp, support);
    bool feasible = true;
    for (Eigen::Index i = 0; i < v.size(); ++i) feasible = feasible && v[i] > 0.0;

    if (!feasible) {
      // move toward v until the first weight reaches zero
      double alpha = 1.0;
      Eigen::Index blocking = -1;
      for (std::size_t i = 0; i < support.size(); ++i) {
        const double wi = w[support[i]];
        if (v[i] <= 0.0 && wi > v[i]) {
          const double a = wi / (wi - v[i]);
          if (a < alpha) {
            alpha = a;
            blocking = support[i];
          }
        }
      }
      if (blocking < 0 || (alpha <= 0.0 && blocking == just_added)) break;
      Vector next = w;
      for (std::size_t i = 0; i < support.size(); ++i) {
        next[support[i]] = std::max(0.0, w[support[i]] + alpha * (v[i] - w[support[i]]));
      }
      next[blocking] = 0.0;
      next /= next.sum();
      if (qp.objective(next) > qp.objective(w) + 1e-14 * (1.0 + std::abs(qp.objective(w)))) break;
      w = next;
      just_added = -1;
      continue;
    }

    Vector next = Vector::Zero(n);
    for (std::size_t i = 0; i < support.size(); ++i) next[support[i]] = v[i];
    next /= next.sum();
    if (qp.objective(next) <= qp.objective(w) + 1e-14 * (1.0 + std::abs(qp.objective(w)))) w = next;

    const double f = qp.objective(w);
    const double r = kkt_residual(qp, w);
    if (f < best.objective || (f <= best.objective + 1e-15 && r < best.kkt_residual)) {
      best = {w, f, r, static_cast<int>(iter + 1)};
    }

    const Vector g = qp.gradient(w);
    double level = 0.0;
    for (Eigen::Index i : support) level += g[i];
    level /= static_cast<double>(support.size());
    Eigen::Index enter = -1;
    double most_negative = level - 0.5 * tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] == 0.0 && g[i] < most_negative) {
        most_negative = g[i];
        enter = i;
      }
    }
    if (enter < 0) {
      if (r <= tol) return QpSolution{w, f, r, static_cast<int>(iter + 1)};
      break;
    }
    if (enter == just_added) break;
    // seed the entering coordinate with a tiny weight so it joins the support
    w[enter] = 1e-300;
    just_added = enter;
  }

  best.kkt_residual = kkt_residual(qp, best.weights);
  if (best.kkt_residual <= tol) return best;
  throw QpNonConvergence("simplex QP did not reach KKT residual " + std::to_string(tol) + " (best " +
                             std::to_string(best.kkt_residual) + ")",
                         best);
}

}  // namespace skh
