#pragma once

// Random-number plumbing and Monte Carlo sampling of Gaussian mixtures:
// multinomial and stratified component selection followed by Gaussian draws.

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "skh/errors.hpp"
#include "skh/kernel.hpp"
#include "skh/linalg.hpp"

namespace skh {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed for a (base, tag...) tuple.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

inline Vector standard_normal(int d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(d);
  for (int i = 0; i < d; ++i) z[i] = normal(rng);
  return z;
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Index of the first cumulative weight exceeding u (inverse CDF of a
/// discrete distribution given by running sums).
inline int inverse_cdf_index(std::span<const double> cumulative, double u) {
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  const auto idx = static_cast<int>(it - cumulative.begin());
  // u may equal the total mass after rounding; fall back to the last positive entry
  if (idx < static_cast<int>(cumulative.size())) return idx;
  int last = static_cast<int>(cumulative.size()) - 1;
  while (last > 0 && cumulative[last] == cumulative[last - 1]) --last;
  return last;
}

inline std::vector<double> cumulative_sum(std::span<const double> weights) {
  std::vector<double> c(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    c[i] = acc;
  }
  return c;
}

inline std::vector<int> multinomial_components(std::span<const double> weights, int n, Rng& rng) {
  const std::vector<double> cum = cumulative_sum(weights);
  const double total = cum.back();
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = inverse_cdf_index(cum, uniform01(rng) * total);
  return out;
}

/// One point per stratum [i/N, (i+1)/N), all strata sharing a single random
/// offset, so component i is drawn floor(N w_i) or ceil(N w_i) times. Output
/// is sorted by component index.
inline std::vector<int> stratified_components(std::span<const double> weights, int n, Rng& rng) {
  const std::vector<double> cum = cumulative_sum(weights);
  const double total = cum.back();
  const double offset = uniform01(rng);
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + offset) / static_cast<double>(n);
    out[i] = inverse_cdf_index(cum, u * total);
  }
  return out;
}

/// Draws from the components of a mixture; covariance factors are computed
/// once per distinct covariance.
class MixtureSampler {
 public:
  explicit MixtureSampler(const GaussianMixture& p) : p_(&p), factor_of_(p.size(), -1) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (i > 0 && p.covariances[i] == p.covariances[i - 1]) {
        factor_of_[i] = factor_of_[i - 1];
        continue;
      }
      factors_.push_back(psd_factor(p.covariances[i]));
      factor_of_[i] = static_cast<int>(factors_.size()) - 1;
    }
  }

  Vector draw_component(int component, Rng& rng) const {
    const Vector z = standard_normal(p_->dim(), rng);
    return p_->means[component] + factors_[factor_of_[component]] * z;
  }

  /// Maps a standard-normal vector through component `component`.
  Vector transform(int component, const Vector& z) const {
    return p_->means[component] + factors_[factor_of_[component]] * z;
  }

  /// Particles at the given components with uniform weights; ancestry holds
  /// the component index.
  WeightedParticleSet draw(const std::vector<int>& components, Rng& rng) const {
    WeightedParticleSet q;
    const int n = static_cast<int>(components.size());
    q.points.resize(p_->dim(), n);
    for (int i = 0; i < n; ++i) q.points.col(i) = draw_component(components[i], rng);
    q.weights = Vector::Constant(n, 1.0 / n);
    q.ancestry = components;
    return q;
  }

 private:
  const GaussianMixture* p_;
  std::vector<Matrix> factors_;
  std::vector<int> factor_of_;
};

inline WeightedParticleSet sample_mixture_iid(const GaussianMixture& p, int n, Rng& rng) {
  if (n < 1) throw UsageError("sample count must be >= 1");
  const MixtureSampler sampler(p);
  return sampler.draw(multinomial_components(p.weights, n, rng), rng);
}

}  // namespace skh
