#pragma once

// Helpers shared by the unit tests: random instances built directly from
// <random>, independent of the library's samplers.

#include <cmath>
#include <random>
#include <vector>

#include "skh/kernel.hpp"

namespace skh::testing {

inline GaussianMixture random_mixture(std::mt19937_64& rng, int k, int d, double spread = 3.0) {
  std::uniform_real_distribution<double> unif(-spread, spread);
  std::uniform_real_distribution<double> var(0.2, 2.0);
  std::uniform_real_distribution<double> w(0.1, 1.0);
  GaussianMixture p;
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    Vector m(d);
    for (int j = 0; j < d; ++j) m[j] = unif(rng);
    Matrix a = Matrix::Zero(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) a(r, c) = 0.4 * unif(rng) / spread;
    Matrix cov = a * a.transpose();
    cov.diagonal().array() += var(rng);
    const double wi = w(rng);
    total += wi;
    p.add(wi, m, cov);
  }
  for (double& wi : p.weights) wi /= total;
  return p;
}

/// Exact draw from a mixture using <random> and an LLT factor.
inline Vector draw(const GaussianMixture& p, std::mt19937_64& rng) {
  std::discrete_distribution<int> pick(p.weights.begin(), p.weights.end());
  std::normal_distribution<double> normal;
  const int c = pick(rng);
  Vector z(p.dim());
  for (int j = 0; j < p.dim(); ++j) z[j] = normal(rng);
  if (p.covariances[c].isZero(0.0)) return p.means[c];
  const Matrix l = p.covariances[c].llt().matrixL();
  return p.means[c] + l * z;
}

inline WeightedParticleSet uniform_set(const Matrix& pts) {
  WeightedParticleSet q;
  q.points = pts;
  q.weights = Vector::Constant(pts.cols(), 1.0 / pts.cols());
  return q;
}

/// Brute-force MMD^2 against a mixture using a Monte Carlo surrogate is not
/// needed; this is the closed form written out term by term.
inline double naive_sq_embedding(const WeightedParticleSet& q, double sigma2) {
  double s = 0.0;
  for (int i = 0; i < q.size(); ++i)
    for (int j = 0; j < q.size(); ++j)
      s += q.weights[i] * q.weights[j] *
           std::exp(-(q.points.col(i) - q.points.col(j)).squaredNorm() / (2.0 * sigma2));
  return s;
}

}  // namespace skh::testing
