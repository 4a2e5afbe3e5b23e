#include "skh/fw_quad.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <cmath>
#include <random>

#include "test_util.hpp"

namespace skh {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SearchPool pool_from(const GaussianMixture& p, const KernelConfig& k, const Matrix& pts) {
  SearchPool pool;
  pool.points = pts;
  pool.mean_map = MeanMap(p, k).evaluate(pts);
  return pool;
}

QuadratureOptions options(int n, FwVariant v) {
  QuadratureOptions o;
  o.n = n;
  o.variant = v;
  return o;
}

const GaussianMixture kStdNormal = GaussianMixture::single(Vector::Zero(1), Matrix::Identity(1, 1));

TEST(FwQuad, FirstIterationPicksMeanMapMaximizer) {
  std::mt19937_64 rng(1);
  const KernelConfig k{1.0, 2};
  const GaussianMixture p = testing::random_mixture(rng, 4, 2);
  for (FwVariant v : {FwVariant::FW, FwVariant::FW_LS, FwVariant::FCFW}) {
    const QuadratureResult r = fw_quad(p, k, 1, 500, v, 42);
    Rng pool_rng(42);
    const MeanMap mu(p, k);
    const SearchPool pool = make_search_pool(p, mu, 500, pool_rng);
    Eigen::Index best;
    pool.mean_map.maxCoeff(&best);
    ASSERT_EQ(r.particles.size(), 1);
    EXPECT_EQ(r.particles.weights[0], 1.0);
    EXPECT_EQ(r.particles.points.col(0), pool.points.col(best));
  }
}

TEST(FwQuad, HerdingWeightsAreExactlyUniform) {
  std::mt19937_64 rng(2);
  const KernelConfig k{1.0, 2};
  const GaussianMixture p = testing::random_mixture(rng, 6, 2);
  const QuadratureResult r = fw_quad(p, k, 10, 2000, FwVariant::FW, 7);
  ASSERT_EQ(r.particles.size(), 10);
  for (int i = 0; i < 10; ++i) EXPECT_LE(std::abs(r.particles.weights[i] - 0.1), 1e-15);
}

TEST(FwQuad, DegenerateTargetConvergesInOneIteration) {
  const KernelConfig k{1.0, 2};
  const Vector mu = (Vector(2) << 0.5, -1.5).finished();
  for (FwVariant v : {FwVariant::FW, FwVariant::FW_LS, FwVariant::FCFW}) {
    const QuadratureResult r = fw_quad(GaussianMixture::point_mass(mu), k, 10, 50, v, 3);
    EXPECT_EQ(r.iterations, 1);
    EXPECT_EQ(r.particles.size(), 1);
    EXPECT_LT(r.fw_error, 1e-7);
    EXPECT_EQ(r.particles.points.col(0), mu);
  }
}

TEST(FwQuad, TwoPointFullyCorrectiveMatchesBruteForce) {
  const KernelConfig k{1.0, 1};
  Matrix grid(1, 101);
  for (int i = 0; i < 101; ++i) grid(0, i) = -5.0 + 0.1 * i;
  const SearchPool pool = pool_from(kStdNormal, k, grid);
  const QuadratureResult r = fw_quad_on_pool(pool, 1.0 / std::sqrt(3.0), k, options(2, FwVariant::FCFW));

  // Oracle: mu_p(x) = exp(-x^2/4)/sqrt(2) for N(0,1) and sigma2 = 1.
  // Step 1 takes argmax mu_p; step 2 the argmin of k(x1, x) - mu_p(x), both by
  // direct enumeration; weights by a 1e-4 grid on the objective.
  auto mu_p = [](double x) { return std::exp(-x * x / 4.0) / std::sqrt(2.0); };
  auto kern = [](double a, double b) { return std::exp(-(a - b) * (a - b) / 2.0); };
  int i1 = 0;
  for (int i = 1; i < 101; ++i)
    if (mu_p(grid(0, i)) > mu_p(grid(0, i1))) i1 = i;
  int i2 = 0;
  double best_lin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 101; ++i) {
    const double v = kern(grid(0, i1), grid(0, i)) - mu_p(grid(0, i));
    if (v < best_lin) best_lin = v, i2 = i;
  }
  const double x1 = grid(0, i1), x2 = grid(0, i2);
  double best_w = 0.0, best_j = std::numeric_limits<double>::infinity();
  for (int s = 0; s <= 10000; ++s) {
    const double w = s * 1e-4;
    const double j = 0.5 * (w * w + (1 - w) * (1 - w) + 2 * w * (1 - w) * kern(x1, x2) - 2 * w * mu_p(x1) -
                            2 * (1 - w) * mu_p(x2) + 1.0 / std::sqrt(3.0));
    if (j < best_j) best_j = j, best_w = w;
  }
  ASSERT_EQ(r.particles.size(), 2);
  EXPECT_EQ(r.particles.points(0, 0), x1);
  EXPECT_EQ(r.particles.points(0, 1), x2);
  EXPECT_NEAR(r.particles.weights[0], best_w, 1e-4);
  EXPECT_NEAR(0.5 * r.fw_error * r.fw_error, best_j, 1e-8);

  // No pair of pool points can beat the global two-point optimum.
  double global = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 101; ++a)
    for (int b = a + 1; b < 101; ++b)
      for (int s = 0; s <= 100; ++s) {
        const double w = s * 1e-2, xa = grid(0, a), xb = grid(0, b);
        global = std::min(global, 0.5 * (w * w + (1 - w) * (1 - w) + 2 * w * (1 - w) * kern(xa, xb) -
                                         2 * w * mu_p(xa) - 2 * (1 - w) * mu_p(xb) + 1.0 / std::sqrt(3.0)));
      }
  EXPECT_GE(0.5 * r.fw_error * r.fw_error, global - 1e-6);
}

TEST(FwVertexSearch, EmptyIterateAndSingletonPool) {
  const KernelConfig k{1.0, 1};
  Matrix pts(1, 5);
  pts << 3.0, -1.0, 0.2, 0.2, 4.0;
  const SearchPool pool = pool_from(kStdNormal, k, pts);
  const QuadratureState empty(pool, 1.0 / std::sqrt(3.0), k, false);
  EXPECT_EQ(fw_vertex_search(empty), 2);  // tie between 2 and 3 goes to the lower index

  const SearchPool single = pool_from(kStdNormal, k, Matrix::Constant(1, 1, 7.0));
  EXPECT_EQ(fw_vertex_search(QuadratureState(single, 1.0 / std::sqrt(3.0), k, false)), 0);
}

TEST(FwVertexSearch, MatchesBruteForceRecomputation) {
  std::mt19937_64 rng(4);
  const KernelConfig k{0.8, 2};
  for (int rep = 0; rep < 10; ++rep) {
    const GaussianMixture p = testing::random_mixture(rng, 3, 2);
    const MeanMap mu(p, k);
    Rng pool_rng(rep);
    const SearchPool pool = make_search_pool(p, mu, 300, pool_rng);
    QuadratureState st(pool, mu.squared_norm(), k, false);
    st.step_toward(5, 1.0, true, st.kernel_row(5));
    for (int it = 0; it < 6; ++it) {
      const Eigen::Index j = fw_vertex_search(st);
      Eigen::Index brute = 0;
      double brute_val = std::numeric_limits<double>::infinity();
      for (Eigen::Index x = 0; x < pool.size(); ++x) {
        double v = -mu(pool.points.col(x));
        for (std::size_t i = 0; i < st.chosen().size(); ++i)
          v += st.weights()[i] * kernel_eval(pool.points.col(st.chosen()[i]), pool.points.col(x), k);
        if (v < brute_val - 1e-13) brute_val = v, brute = x;
      }
      EXPECT_EQ(j, brute);
      st.step_toward(j, line_search_gamma(st, j), true, st.kernel_row(j));
    }
  }
}

TEST(LineSearch, NoMoveWhenVertexEqualsIterate) {
  const KernelConfig k{1.0, 1};
  const SearchPool pool = pool_from(kStdNormal, k, (Matrix(1, 3) << 0.0, 1.0, 2.0).finished());
  QuadratureState st(pool, 1.0 / std::sqrt(3.0), k, false);
  st.step_toward(1, 1.0, true, st.kernel_row(1));
  EXPECT_EQ(line_search_gamma(st, 1), 0.0);
  EXPECT_THROW(line_search_gamma(QuadratureState(pool, 0.5, k, false), 0), UsageError);
}

TEST(LineSearch, MatchesGoldenSectionOnTwoPointProblems) {
  const KernelConfig k{1.0, 1};
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  const double norm2 = 1.0 / std::sqrt(3.0);
  auto mu_p = [](double x) { return std::exp(-x * x / 4.0) / std::sqrt(2.0); };
  for (int rep = 0; rep < 50; ++rep) {
    const double a = unif(rng), b = unif(rng);
    const SearchPool pool = pool_from(kStdNormal, k, (Matrix(1, 2) << a, b).finished());
    QuadratureState st(pool, norm2, k, false);
    st.step_toward(0, 1.0, true, st.kernel_row(0));
    const double gamma = line_search_gamma(st, 1);
    EXPECT_GE(gamma, 0.0);
    EXPECT_LE(gamma, 1.0);
    const double kab = std::exp(-(a - b) * (a - b) / 2.0);
    auto J = [&](double g) {
      return 0.5 * ((1 - g) * (1 - g) + g * g + 2 * g * (1 - g) * kab - 2 * (1 - g) * mu_p(a) - 2 * g * mu_p(b) +
                    norm2);
    };
    double lo = 0.0, hi = 1.0;
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 200; ++it) {
      const double c = hi - phi * (hi - lo), d = lo + phi * (hi - lo);
      (J(c) < J(d) ? hi : lo) = (J(c) < J(d) ? d : c);
    }
    EXPECT_NEAR(gamma, 0.5 * (lo + hi), 1e-6) << a << " " << b;
  }
}

TEST(FwQuad, ObjectiveMonotoneForLineSearchAndFullyCorrective) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const KernelConfig k{0.5 + 0.3 * rep, 2};
    const GaussianMixture p = testing::random_mixture(rng, 5, 2);
    for (FwVariant v : {FwVariant::FW_LS, FwVariant::FCFW}) {
      const QuadratureResult r = fw_quad(p, k, 40, 2000, v, 100 + rep);
      for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
        EXPECT_LE(r.objective_history[i], r.objective_history[i - 1] + 1e-12) << to_string(v) << " it " << i;
      }
    }
  }
}

TEST(FwQuad, ReportedErrorEqualsMmdAndFcfwDominates) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 8; ++rep) {
    const KernelConfig k{1.0, 2};
    const GaussianMixture p = testing::random_mixture(rng, 8, 2);
    const QuadratureResult fw = fw_quad(p, k, 30, 3000, FwVariant::FW, 500 + rep);
    const QuadratureResult fc = fw_quad(p, k, 30, 3000, FwVariant::FCFW, 500 + rep);
    const QuadratureResult ls = fw_quad(p, k, 30, 3000, FwVariant::FW_LS, 500 + rep);
    for (const QuadratureResult* r : {&fw, &fc, &ls}) {
      const double direct = mmd(p, r->particles, k);
      EXPECT_NEAR(r->fw_error, direct, 1e-9 * std::max(direct, 1e-3));
      r->particles.validate();
    }
    EXPECT_LE(fc.fw_error, fw.fw_error + 1e-9);
  }
}

TEST(FwQuad, ToleranceStopsEarly) {
  const KernelConfig k{1.0, 1};
  const QuadratureResult full = fw_quad(kStdNormal, k, 50, 5000, FwVariant::FCFW, 1);
  const QuadratureResult early = fw_quad(kStdNormal, k, 50, 5000, FwVariant::FCFW, 1, 0.05);
  EXPECT_LE(early.fw_error, 0.05);
  EXPECT_LT(early.iterations, full.iterations);
}

TEST(FwQuad, PoolSmallerThanNIsUsageError) {
  EXPECT_THROW(fw_quad(kStdNormal, KernelConfig{1.0, 1}, 10, 5, FwVariant::FW, 1), UsageError);
  EXPECT_THROW(fw_quad(kStdNormal, KernelConfig{1.0, 2}, 1, 5, FwVariant::FW, 1), UsageError);
}

TEST(FwQuad, LargerPoolsDoNotHurtMedianError) {
  std::mt19937_64 rng(10);
  const KernelConfig k{1.0, 2};
  const GaussianMixture p = testing::random_mixture(rng, 10, 2);
  for (FwVariant v : {FwVariant::FW}) {
    double previous = std::numeric_limits<double>::infinity();
    for (int m : {100, 1000, 10000}) {
      std::vector<double> errs;
      for (int seed = 0; seed < 10; ++seed) errs.push_back(fw_quad(p, k, 50, m, v, 1000 + seed).fw_error);
      const double med = median(errs);
      EXPECT_LE(med, previous) << to_string(v) << " M=" << m;
      previous = med;
    }
  }
}

TEST(FwQuad, MonteCarloRateAndFullyCorrectiveAdvantageIn1d) {
  const KernelConfig k{1.0, 1};
  GaussianMixture p;
  p.add(0.4, Vector::Constant(1, -2.0), Matrix::Constant(1, 1, 0.5));
  p.add(0.6, Vector::Constant(1, 1.5), Matrix::Constant(1, 1, 1.5));
  const MeanMap mu(p, k);
  const double norm2 = mu.squared_norm();
  const std::vector<int> ns{10, 20, 50, 100, 200};
  std::vector<double> log_n, log_mc;
  for (int n : ns) {
    std::vector<double> mc, fc;
    for (int seed = 0; seed < 10; ++seed) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
      mc.push_back(mmd(mu, norm2, sample_mixture_iid(p, n, rng), k));
      fc.push_back(fw_quad(p, k, n, 20000, FwVariant::FCFW, seed).fw_error);
    }
    log_n.push_back(std::log(n));
    log_mc.push_back(std::log(median(mc)));
    if (n >= 20) EXPECT_LT(median(fc), median(mc)) << "N=" << n;
  }
  const double mx = std::accumulate(log_n.begin(), log_n.end(), 0.0) / log_n.size();
  const double my = std::accumulate(log_mc.begin(), log_mc.end(), 0.0) / log_mc.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    sxy += (log_n[i] - mx) * (log_mc[i] - my);
    sxx += (log_n[i] - mx) * (log_n[i] - mx);
  }
  EXPECT_NEAR(sxy / sxx, -0.5, 0.15);
}

}  // namespace
}  // namespace skh
