#pragma once

// Frank-Wolfe adaptive quadrature: greedy construction of a weighted point
// set whose kernel mean embedding approaches mu_p, minimizing
// J(g) = 1/2 ||g - mu_p||^2 over the convex hull of Phi(pool).
//
// The vertex search is exhaustive over a finite pool of candidate points,
// drawn i.i.d. from p once per call. mu_p is precomputed on the pool and the
// running sum  s(x) = sum_i w_i k(x_i, x)  is kept for every pool point, so an
// iteration costs O(M) kernel evaluations for FW / FW-LS and O(k M) for FCFW.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "skh/errors.hpp"
#include "skh/kernel.hpp"
#include "skh/sampling.hpp"
#include "skh/simplex_qp.hpp"

namespace skh {

enum class FwVariant {
  FW,     ///< step 1/(k+1): kernel herding, uniform weights
  FW_LS,  ///< analytic line search
  FCFW,   ///< fully corrective: re-optimize all weights every iteration
};

inline std::string to_string(FwVariant v) {
  switch (v) {
    case FwVariant::FW: return "fw";
    case FwVariant::FW_LS: return "fw-ls";
    case FwVariant::FCFW: return "fcfw";
  }
  return "?";
}

/// Candidate points with mu_p precomputed; `components` records which
/// mixture component produced each point (empty if unknown).
struct SearchPool {
  Matrix points;  ///< d x M
  Vector mean_map;
  std::vector<int> components;

  Eigen::Index size() const { return points.cols(); }
};

inline SearchPool make_search_pool(const GaussianMixture& p, const MeanMap& mu, int m, Rng& rng) {
  const MixtureSampler sampler(p);
  const std::vector<int> comps = multinomial_components(p.weights, m, rng);
  SearchPool pool;
  pool.points.resize(p.dim(), m);
  for (int j = 0; j < m; ++j) pool.points.col(j) = sampler.draw_component(comps[j], rng);
  pool.mean_map = mu.evaluate(pool.points);
  pool.components = comps;
  return pool;
}

/// The iterate g_k = sum_i w_i Phi(x_i) together with everything needed to
/// run the next iteration against a fixed pool.
class QuadratureState {
 public:
  QuadratureState(const SearchPool& pool, double mu_sqnorm, const KernelConfig& k, bool keep_rows)
      : pool_(&pool),
        kernel_(k),
        mu_sqnorm_(mu_sqnorm),
        keep_rows_(keep_rows),
        running_(Vector::Zero(pool.size())) {
    if (pool.size() == 0) throw UsageError("empty search pool");
    if (pool.points.rows() != k.dim) throw UsageError("search pool dimension does not match kernel");
  }

  const SearchPool& pool() const { return *pool_; }
  const KernelConfig& kernel() const { return kernel_; }
  const std::vector<Eigen::Index>& chosen() const { return chosen_; }
  const Vector& weights() const { return weights_; }
  const Vector& running_sum() const { return running_; }
  double mu_sqnorm() const { return mu_sqnorm_; }

  /// <g, g>
  double self_inner() const {
    double gg = 0.0;
    for (std::size_t i = 0; i < chosen_.size(); ++i) gg += weights_[i] * running_[chosen_[i]];
    return gg;
  }
  /// <g, mu_p>
  double mean_inner() const {
    double gm = 0.0;
    for (std::size_t i = 0; i < chosen_.size(); ++i) gm += weights_[i] * pool_->mean_map[chosen_[i]];
    return gm;
  }

  /// J(g) = 1/2 ||g - mu_p||^2, clamped at zero.
  double objective() const { return 0.5 * std::max(0.0, self_inner() - 2.0 * mean_inner() + mu_sqnorm_); }
  double fw_error() const { return std::sqrt(2.0 * objective()); }

  /// Position of pool index `j` among the chosen atoms, or -1.
  int position_of(Eigen::Index j) const {
    const auto it = std::find(chosen_.begin(), chosen_.end(), j);
    return it == chosen_.end() ? -1 : static_cast<int>(it - chosen_.begin());
  }

  Vector kernel_row(Eigen::Index j) const { return skh::kernel_row(pool_->points.col(j), pool_->points, kernel_); }

  /// g <- (1 - gamma) g + gamma Phi(x_j). With `merge`, a repeated vertex
  /// accumulates weight on its existing atom instead of adding a new one.
  void step_toward(Eigen::Index j, double gamma, bool merge, const Vector& row) {
    const int pos = merge ? position_of(j) : -1;
    weights_ *= (1.0 - gamma);
    running_ = (1.0 - gamma) * running_ + gamma * row;
    if (pos >= 0) {
      weights_[pos] += gamma;
    } else {
      append(j, gamma, row);
    }
  }

  /// Herding update with weights reset to exactly 1/k.
  void step_uniform(Eigen::Index j, const Vector& row) {
    const double k = static_cast<double>(chosen_.size() + 1);
    running_ = ((k - 1.0) / k) * running_ + (1.0 / k) * row;
    append(j, 0.0, row);
    weights_.setConstant(1.0 / k);
  }

  /// Adds atom j with zero weight (FCFW); returns its position.
  int add_atom(Eigen::Index j, const Vector& row) {
    const int pos = position_of(j);
    if (pos >= 0) return pos;
    append(j, 0.0, row);
    return static_cast<int>(chosen_.size()) - 1;
  }

  SimplexQp simplex_qp() const {
    const auto n = static_cast<Eigen::Index>(chosen_.size());
    SimplexQp qp{gram_.topLeftCorner(n, n), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) qp.linear[i] = pool_->mean_map[chosen_[i]];
    return qp;
  }

  /// Replaces all weights (FCFW); requires kept kernel rows.
  void set_weights(const Vector& w) {
    if (!keep_rows_) throw UsageError("set_weights requires stored kernel rows");
    weights_ = w;
    running_.setZero();
    for (std::size_t i = 0; i < chosen_.size(); ++i) {
      if (w[i] != 0.0) running_ += w[i] * rows_[i];
    }
  }

  /// Particles with positive weight; ancestry holds pool indices.
  WeightedParticleSet particles() const {
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < chosen_.size(); ++i)
      if (weights_[i] > 0.0) keep.push_back(static_cast<Eigen::Index>(i));
    WeightedParticleSet q;
    q.points.resize(kernel_.dim, static_cast<Eigen::Index>(keep.size()));
    q.weights.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      q.points.col(i) = pool_->points.col(chosen_[keep[i]]);
      q.weights[i] = weights_[keep[i]];
      q.ancestry.push_back(static_cast<int>(chosen_[keep[i]]));
    }
    const double total = q.weights.sum();
    if (total > 0.0 && std::abs(total - 1.0) > 1e-15) q.weights /= total;
    return q;
  }

 private:
  void append(Eigen::Index j, double w, const Vector& row) {
    const auto n = static_cast<Eigen::Index>(chosen_.size());
    chosen_.push_back(j);
    weights_.conservativeResize(n + 1);
    weights_[n] = w;
    if (keep_rows_) {
      if (gram_.rows() < n + 1) {
        const Eigen::Index cap = std::max<Eigen::Index>(2 * (n + 1), 8);
        Matrix grown = Matrix::Zero(cap, cap);
        grown.topLeftCorner(n, n) = gram_.topLeftCorner(n, n);
        gram_.swap(grown);
      }
      for (Eigen::Index i = 0; i < n; ++i) gram_(i, n) = gram_(n, i) = row[chosen_[i]];
      gram_(n, n) = 1.0;
      rows_.push_back(row);
    }
  }

  const SearchPool* pool_;
  KernelConfig kernel_;
  double mu_sqnorm_;
  bool keep_rows_;
  std::vector<Eigen::Index> chosen_;
  Vector weights_;
  Vector running_;  ///< s(x) = <g, Phi(x)> on the pool
  std::vector<Vector> rows_;
  Matrix gram_;
};

/// Pool index minimizing <g_k - mu_p, Phi(x)> = s(x) - mu_p(x); lowest index
/// wins ties. For the empty iterate this is the maximizer of mu_p.
inline Eigen::Index fw_vertex_search(const QuadratureState& state) {
  const Vector& s = state.running_sum();
  const Vector& mu = state.pool().mean_map;
  Eigen::Index best = 0;
  double best_val = s[0] - mu[0];
  for (Eigen::Index j = 1; j < s.size(); ++j) {
    const double v = s[j] - mu[j];
    if (v < best_val) {
      best_val = v;
      best = j;
    }
  }
  return best;
}

/// Exact minimizer over [0, 1] of J((1 - gamma) g + gamma Phi(v)):
///   gamma = <g - mu, g - Phi(v)> / ||g - Phi(v)||^2
/// built from kernel and mean-map evaluations only.
inline double line_search_gamma(double self_inner, double mean_inner, double s_v, double mu_v) {
  const double denom = self_inner - 2.0 * s_v + 1.0;
  if (denom < 1e-14) return 0.0;
  const double numer = self_inner - s_v - mean_inner + mu_v;
  return std::clamp(numer / denom, 0.0, 1.0);
}

inline double line_search_gamma(const QuadratureState& state, Eigen::Index vertex) {
  if (state.chosen().empty()) throw UsageError("line search needs a nonempty iterate");
  return line_search_gamma(state.self_inner(), state.mean_inner(), state.running_sum()[vertex],
                           state.pool().mean_map[vertex]);
}

struct QuadratureOptions {
  int n = 1;
  FwVariant variant = FwVariant::FW;
  std::optional<double> tolerance;
  double qp_tolerance = 1e-10;
  /// Called after every iteration; used to snapshot intermediate N.
  std::function<void(const QuadratureState&)> observer;
};

struct QuadratureResult {
  WeightedParticleSet particles;  ///< ancestry = pool indices
  double fw_error = 0.0;
  int iterations = 0;
  std::vector<double> objective_history;  ///< J(g_k) after each iteration
  int qp_failures = 0;                    ///< FCFW iterations that fell back to the best QP iterate
};

/// Runs Frank-Wolfe quadrature against a fixed pool. Stops after `n`
/// iterations, when the squared error drops below 1e-15, when the optional
/// tolerance is met, or (FW-LS, FCFW) when no pool point improves J.
inline QuadratureResult fw_quad_on_pool(const SearchPool& pool, double mu_sqnorm, const KernelConfig& k,
                                        const QuadratureOptions& opt) {
  if (opt.n < 1) throw UsageError("fw_quad: N must be >= 1");
  const bool corrective = opt.variant == FwVariant::FCFW;
  QuadratureState state(pool, mu_sqnorm, k, corrective);
  QuadratureResult result;

  for (int iter = 0; iter < opt.n; ++iter) {
    const Eigen::Index j = fw_vertex_search(state);
    const double previous = state.chosen().empty() ? std::numeric_limits<double>::infinity() : state.objective();

    if (!state.chosen().empty() && opt.variant != FwVariant::FW) {
      // FW gap <g - mu, g - Phi(x_j)>; non-positive means g is optimal over the pool hull
      const double gap = state.self_inner() - state.mean_inner() - state.running_sum()[j] + pool.mean_map[j];
      if (gap <= 1e-15) break;
    }

    const Vector row = state.kernel_row(j);
    if (state.chosen().empty()) {
      state.step_toward(j, 1.0, true, row);
    } else {
      switch (opt.variant) {
        case FwVariant::FW:
          state.step_uniform(j, row);
          break;
        case FwVariant::FW_LS:
          state.step_toward(j, line_search_gamma(state, j), true, row);
          break;
        case FwVariant::FCFW: {
          state.add_atom(j, row);
          const SimplexQp qp = state.simplex_qp();
          Vector warm = Vector::Zero(qp.size());
          warm.head(state.weights().size()) = state.weights();
          QpSolution sol;
          try {
            sol = simplex_qp_solve(qp, opt.qp_tolerance, warm);
          } catch (const QpNonConvergence& e) {
            sol = e.best();
            ++result.qp_failures;
          }
          const Vector before = state.weights();
          state.set_weights(sol.weights);
          if (state.objective() > previous) {
            // numerical trouble in the QP; take the line-search step instead
            state.set_weights(before);
            const int pos = state.position_of(j);
            const double gamma = line_search_gamma(state, j);
            Vector w = (1.0 - gamma) * before;
            w[pos] += gamma;
            state.set_weights(w);
          }
          break;
        }
      }
    }

    result.objective_history.push_back(state.objective());
    if (opt.observer) opt.observer(state);
    const double err = state.fw_error();
    if (err * err < 1e-15) break;
    if (opt.tolerance && err <= *opt.tolerance) break;
  }

  result.particles = state.particles();
  result.fw_error = state.fw_error();
  result.iterations = static_cast<int>(result.objective_history.size());
  return result;
}

/// Frank-Wolfe quadrature of a Gaussian mixture: draws an M-point pool from
/// p with `seed`, then runs `variant` for up to N iterations. The returned
/// ancestry refers to the mixture component each particle was drawn from.
inline QuadratureResult fw_quad(const GaussianMixture& p, const KernelConfig& k, int n, int m, FwVariant variant,
                                std::uint64_t seed, std::optional<double> tolerance = std::nullopt) {
  if (n < 1) throw UsageError("fw_quad: N must be >= 1");
  if (m < n) throw UsageError("fw_quad: pool size M must be >= N");
  const MeanMap mu(p, k);
  Rng rng(seed);
  const SearchPool pool = make_search_pool(p, mu, m, rng);
  QuadratureOptions opt;
  opt.n = n;
  opt.variant = variant;
  opt.tolerance = tolerance;
  QuadratureResult r = fw_quad_on_pool(pool, mu.squared_norm(), k, opt);
  for (int& a : r.particles.ancestry) a = pool.components[a];
  return r;
}

}  // namespace skh
