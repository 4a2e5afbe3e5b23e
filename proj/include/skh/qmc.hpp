#pragma once

// Quasi-Monte Carlo sampling of Gaussian mixtures: the last Sobol coordinate
// picks the component by inverse CDF over the stored component order, the
// first d coordinates become standard normals through the inverse normal CDF.

#include <cmath>
#include <numbers>

#include "skh/errors.hpp"
#include "skh/kernel.hpp"
#include "skh/sampling.hpp"
#include "skh/sobol.hpp"

namespace skh {

/// Inverse of the standard normal CDF. Wichura's AS241 rational
/// approximation followed by one Newton step on erfc.
inline double inverse_normal_cdf(double u) {
  if (!(u > 0.0 && u < 1.0)) throw UsageError("inverse_normal_cdf: argument must lie in (0, 1)");
  const double q = u - 0.5;
  double x;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    x = q *
        (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
             45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
          133.14166789178437745) * r + 3.387132872796366608) /
        (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
             21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
          42.313330701600911252) * r + 1.0);
  } else {
    double r = q < 0.0 ? u : 1.0 - u;
    r = std::sqrt(-std::log(r));
    if (r <= 5.0) {
      r -= 1.6;
      x = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
    } else {
      r -= 5.0;
      x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
    }
    if (q < 0.0) x = -x;
  }
  // Newton polish: Phi(x) = erfc(-x / sqrt 2) / 2
  const double err = 0.5 * std::erfc(-x / std::numbers::sqrt2) - u;
  const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  if (density > 0.0) x -= err / density;
  return x;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// N quasi-random draws from p with uniform weights; ancestry holds the
/// chosen component. `stream` must have dimension p.dim() + 1.
inline WeightedParticleSet qmc_sample_mixture(const GaussianMixture& p, int n, SobolStream& stream) {
  const int d = p.dim();
  if (stream.dimension() != d + 1) throw UsageError("qmc_sample_mixture: stream dimension must be d + 1");
  if (n < 1) throw UsageError("qmc_sample_mixture: N must be >= 1");
  const std::vector<double> cum = cumulative_sum(p.weights);
  const MixtureSampler sampler(p);
  constexpr double kEdge = 1.0 / 8589934592.0;  // 2^-33
  WeightedParticleSet q;
  q.points.resize(d, n);
  q.ancestry.resize(n);
  Vector z(d);
  for (int i = 0; i < n; ++i) {
    const Vector u = stream.next();
    const int comp = inverse_cdf_index(cum, u[d] * cum.back());
    for (int j = 0; j < d; ++j) z[j] = inverse_normal_cdf(std::clamp(u[j], kEdge, 1.0 - kEdge));
    q.points.col(i) = sampler.transform(comp, z);
    q.ancestry[i] = comp;
  }
  q.weights = Vector::Constant(n, 1.0 / n);
  return q;
}

}  // namespace skh
