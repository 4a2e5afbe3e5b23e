#include "skh/particle_filter.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace skh {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

LgssModel scalar_lgss(double a, double q, double r, double v0 = 1.0) {
  return LgssModel({Matrix::Constant(1, 1, a), Matrix::Identity(1, 1), Matrix::Constant(1, 1, q),
                    Matrix::Constant(1, 1, r), Vector::Zero(1), Matrix::Constant(1, 1, v0)});
}

std::vector<SamplerSpec> all_samplers() {
  return {SamplerSpec::multinomial(), SamplerSpec::stratified(), SamplerSpec::qmc(),
          SamplerSpec::skh(FwVariant::FW, 1.0, 2000), SamplerSpec::skh(FwVariant::FW_LS, 1.0, 2000),
          SamplerSpec::skh(FwVariant::FCFW, 1.0, 2000)};
}

TEST(Stratified, CountsStayWithinFloorAndCeil) {
  std::mt19937_64 gen(1);
  Rng rng(2);
  for (int rep = 0; rep < 1000; ++rep) {
    const int k = 1 + static_cast<int>(gen() % 30);
    const int n = 1 + static_cast<int>(gen() % 200);
    std::vector<double> w(k);
    std::exponential_distribution<double> e;
    double s = 0.0;
    for (double& x : w) s += (x = e(gen));
    for (double& x : w) x /= s;
    std::vector<int> count(k, 0);
    for (int c : stratified_components(w, n, rng)) ++count[c];
    for (int i = 0; i < k; ++i) {
      EXPECT_GE(count[i], static_cast<int>(std::floor(n * w[i] - 1e-9)));
      EXPECT_LE(count[i], static_cast<int>(std::ceil(n * w[i] + 1e-9)));
    }
  }
}

TEST(Stratified, IntegerExpectedCountsAreExact) {
  Rng rng(3);
  const std::vector<double> w{0.25, 0.5, 0.125, 0.125};
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<int> count(4, 0);
    for (int c : stratified_components(w, 16, rng)) ++count[c];
    EXPECT_EQ(count, (std::vector<int>{4, 8, 2, 2}));
  }
}

TEST(Multinomial, CountsMatchBinomialSpread) {
  Rng rng(4);
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  const int n = 50, reps = 10000;
  std::vector<double> total(4, 0.0);
  for (int r = 0; r < reps; ++r)
    for (int c : multinomial_components(w, n, rng)) total[c] += 1.0;
  for (int i = 0; i < 4; ++i) {
    const double sd = std::sqrt(reps * n * w[i] * (1.0 - w[i]));
    EXPECT_NEAR(total[i], reps * n * w[i], 4.0 * sd);
  }
}

TEST(TransitionMixture, SingleParticle) {
  const LgssModel m = make_lgss(1, 2, 1);
  WeightedParticleSet q;
  q.points = Vector::Constant(2, 0.5);
  q.weights = Vector::Ones(1);
  const TransitionMixture tm = build_transition_mixture(q, m, Vector::Zero(1), 1);
  ASSERT_EQ(tm.mixture.mixture.size(), 1u);
  EXPECT_EQ(tm.mixture.mixture.weights[0], 1.0);
  EXPECT_TRUE(tm.mixture.mixture.means[0].isApprox(m.params().A * q.points.col(0)));
  EXPECT_EQ(tm.ancestors[0], 0);
}

TEST(TransitionMixture, ConstantLikelihoodKeepsUniformWeights) {
  const NonlinearBenchmarkModel m;
  WeightedParticleSet q;
  q.points.resize(1, 4);
  q.points << -1.0, 1.0, -2.0, 2.0;  // 0.05 x^2 is symmetric
  q.weights = Vector::Constant(4, 0.25);
  const TransitionMixture tm = build_transition_mixture(q, m, Vector::Constant(1, 0.1), 1);
  EXPECT_NEAR(tm.mixture.mixture.weights[0], tm.mixture.mixture.weights[1], 1e-15);
  EXPECT_NEAR(tm.mixture.mixture.weights[2], tm.mixture.mixture.weights[3], 1e-15);
  q.points << 1.0, 1.0, 1.0, 1.0;
  for (double w : build_transition_mixture(q, m, Vector::Constant(1, 0.1), 1).mixture.mixture.weights)
    EXPECT_NEAR(w, 0.25, 1e-15);
}

TEST(TransitionMixture, EvidenceMatchesDirectSum) {
  const JmlsModel m = make_jmls(3);
  std::mt19937_64 gen(5);
  std::normal_distribution<double> normal;
  WeightedParticleSet q;
  q.points.resize(2, 7);
  q.weights.resize(7);
  q.modes.resize(7);
  for (int i = 0; i < 7; ++i) {
    q.points.col(i) << normal(gen), normal(gen);
    q.weights[i] = 1.0 + i;
    q.modes[i] = i % 2;
  }
  q.weights /= q.weights.sum();
  const Vector y = Vector::Constant(1, 0.8);
  double direct = 0.0;
  for (int i = 0; i < 7; ++i) {
    const JmlsMode& md = m.params().modes[q.modes[i]];
    const double r = y[0] - (md.C * q.points.col(i))[0];
    direct += q.weights[i] * std::exp(-0.5 * r * r) / std::sqrt(2.0 * std::numbers::pi);
  }
  const TransitionMixture tm = build_transition_mixture(q, m, y, 2);
  EXPECT_NEAR(std::exp(tm.log_w), direct, 1e-14);
  EXPECT_EQ(tm.mixture.mixture.size(), 14u);
  double total = 0.0;
  for (double w : tm.mixture.mixture.weights) total += w;
  EXPECT_NEAR(total, 1.0, 1e-12);
  for (std::size_t c = 0; c < 14; ++c) EXPECT_EQ(tm.mixture.modes[c], static_cast<int>(c % 2));
}

TEST(TransitionMixture, DegenerateWeightsReportTheStep) {
  const LgssModel m = scalar_lgss(1.0, 1.0, 1e-4);
  WeightedParticleSet q;
  q.points = Matrix::Zero(1, 3);
  q.weights = Vector::Constant(3, 1.0 / 3.0);
  try {
    build_transition_mixture(q, m, Vector::Constant(1, 100.0), 7);
    FAIL();
  } catch (const DegenerateFilterError& e) {
    EXPECT_EQ(e.time_step(), 7);
  }
}

TEST(RunFilter, DeterministicInitialStateForEverySampler) {
  LgssParams p{Matrix::Identity(2, 2), Matrix::Identity(1, 2), Matrix::Identity(2, 2), Matrix::Identity(1, 1),
               Vector::Constant(2, 0.7), Matrix::Zero(2, 2)};
  const LgssModel m(p);
  for (const SamplerSpec& s : all_samplers()) {
    const FilterTrace tr = run_filter(m, {Vector::Zero(1)}, s, 16, 1, {true});
    const WeightedParticleSet& q = *tr.steps[0].predictive;
    for (int i = 0; i < q.size(); ++i) EXPECT_EQ(q.points.col(i), Vector::Constant(2, 0.7)) << to_string(s);
    EXPECT_NEAR(tr.steps[0].filtered_mean[0], 0.7, 1e-15);
  }
}

TEST(RunFilter, WeightsNormalizedAtEveryStep) {
  const JmlsModel m = make_jmls(6);
  const Trajectory traj = simulate(m, 15, 2);
  for (const SamplerSpec& s : all_samplers()) {
    const FilterTrace tr = run_filter(m, traj.observations, s, 40, 3, {true});
    for (const FilterStep& st : tr.steps) {
      EXPECT_LE(std::abs(st.predictive->weights.sum() - 1.0), 1e-12);
      EXPECT_LE(std::abs(st.posterior->weights.sum() - 1.0), 1e-12);
      st.predictive->validate();
      EXPECT_EQ(st.predictive->modes.size(), static_cast<std::size_t>(st.predictive->size()));
      if (s.kind == SamplerKind::SKH) {
        EXPECT_GT(st.fw_error, 0.0);
      } else {
        EXPECT_EQ(st.fw_error, 0.0);
      }
    }
    double sum = 0.0;
    for (const FilterStep& st : tr.steps) sum += st.log_w;
    EXPECT_NEAR(tr.log_evidence(), sum, 1e-9);
  }
}

TEST(RunFilter, SkhHerdingKeepsUniformWeights) {
  const LgssModel m = make_lgss(8, 3, 1);
  const Trajectory traj = simulate(m, 10, 1);
  const FilterTrace tr = run_filter(m, traj.observations, SamplerSpec::skh(FwVariant::FW, 1.0, 3000), 30, 2, {true});
  for (const FilterStep& st : tr.steps) {
    ASSERT_EQ(st.predictive->size(), 30);
    for (int i = 0; i < 30; ++i) EXPECT_LE(std::abs(st.predictive->weights[i] - 1.0 / 30.0), 1e-15);
  }
}

TEST(RunFilter, BootstrapTracksKalman) {
  const LgssModel m = make_lgss(9, 3, 1);
  const Trajectory traj = simulate(m, 20, 3);
  const KalmanRun kf = kalman_filter(m.params(), traj.observations);
  const int runs = 8;
  std::vector<FilterTrace> traces;
  for (int r = 0; r < runs; ++r) traces.push_back(run_filter(m, traj.observations, SamplerSpec::stratified(), 10000, r));
  for (int t = 0; t < 20; ++t) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0, s2 = 0.0;
      for (const FilterTrace& tr : traces) {
        s += tr.steps[t].filtered_mean[j];
        s2 += tr.steps[t].filtered_mean[j] * tr.steps[t].filtered_mean[j];
      }
      const double mean = s / runs;
      const double sd = std::sqrt(std::max(0.0, s2 / runs - mean * mean) * runs / (runs - 1));
      EXPECT_NEAR(traces[0].steps[t].filtered_mean[j], kf.filtered[t].mean[j], 4.0 * sd + 1e-3) << t;
    }
  }
}

TEST(RunFilter, LogEvidenceCloseToKalman) {
  const LgssModel m = make_lgss(10, 3, 1);
  const Trajectory traj = simulate(m, 50, 4);
  const double exact = kalman_filter(m.params(), traj.observations).log_evidence();
  for (const SamplerSpec& s : {SamplerSpec::multinomial(), SamplerSpec::stratified(), SamplerSpec::qmc()}) {
    std::vector<double> errs;
    for (int seed = 0; seed < 8; ++seed)
      errs.push_back(std::abs(run_filter(m, traj.observations, s, 10000, seed).log_evidence() - exact));
    EXPECT_LE(median(errs), 0.5) << to_string(s);
    EXPECT_LE(*std::max_element(errs.begin(), errs.end()), 1.5) << to_string(s);
  }
}

TEST(RunFilter, EvidenceEstimateIsUnbiased) {
  const LgssModel m = make_lgss(11, 2, 1);
  const Trajectory traj = simulate(m, 5, 6);
  const double exact = std::exp(kalman_filter(m.params(), traj.observations).log_evidence());
  for (const SamplerSpec& s : {SamplerSpec::multinomial(), SamplerSpec::stratified()}) {
    const int runs = 500;
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < runs; ++r) {
      const double z = std::exp(run_filter(m, traj.observations, s, 20, 1000 + r).log_evidence());
      sum += z;
      sum2 += z * z;
    }
    const double mean = sum / runs;
    const double se = std::sqrt((sum2 / runs - mean * mean) / (runs - 1));
    EXPECT_NEAR(mean, exact, 3.0 * se) << to_string(s);
  }
}

TEST(RunFilter, ReproducibleUnderSeed) {
  const JmlsModel m = make_jmls(12);
  const Trajectory traj = simulate(m, 12, 1);
  for (const SamplerSpec& s : all_samplers()) {
    const FilterTrace a = run_filter(m, traj.observations, s, 25, 77);
    const FilterTrace b = run_filter(m, traj.observations, s, 25, 77);
    for (int t = 0; t < 12; ++t) {
      EXPECT_EQ(a.steps[t].filtered_mean, b.steps[t].filtered_mean);
      EXPECT_EQ(a.steps[t].log_z, b.steps[t].log_z);
      EXPECT_EQ(a.steps[t].fw_error, b.steps[t].fw_error);
    }
  }
}

TEST(Skh, KernelIgnoresParticleHistories) {
  const JmlsModel m = make_jmls(13);
  const Trajectory traj = simulate(m, 3, 2);
  const FilterTrace tr = run_filter(m, traj.observations, SamplerSpec::stratified(), 30, 1, {true});
  const TransitionMixture tm = build_transition_mixture(*tr.steps[1].predictive, m, traj.observations[1], 2);
  TransitionMixture relabeled = tm;
  std::mt19937_64 gen(3);
  std::shuffle(relabeled.ancestors.begin(), relabeled.ancestors.end(), gen);
  for (int& md : relabeled.mixture.modes) md = 1 - md;
  for (FwVariant v : {FwVariant::FW, FwVariant::FCFW}) {
    StepSampler s1(SamplerSpec::skh(v, 1.0, 2000), 2, 9), s2(SamplerSpec::skh(v, 1.0, 2000), 2, 9);
    double e1 = 0.0, e2 = 0.0;
    const WeightedParticleSet a = pf_step(s1, tm, 20, 2, e1);
    const WeightedParticleSet b = pf_step(s2, relabeled, 20, 2, e2);
    EXPECT_EQ(e1, e2);
    EXPECT_EQ(a.points, b.points);
    EXPECT_EQ(a.weights, b.weights);
  }
}

TEST(Skh, QuadratureErrorShrinksWithN) {
  const LgssModel m = make_lgss(14, 3, 1);
  std::vector<double> prev;
  for (int n : {20, 50, 100, 200}) {
    std::vector<double> errs;
    for (int seed = 0; seed < 10; ++seed) {
      const Trajectory traj = simulate(m, 10, seed);
      const KalmanRun kf = kalman_filter(m.params(), traj.observations);
      const FilterTrace tr =
          run_filter(m, traj.observations, SamplerSpec::skh(FwVariant::FW, 1.0, 5000), n, seed, {true});
      const GaussianBelief& truth = kf.predicted.back();
      const GaussianMixture g = GaussianMixture::single(truth.mean, truth.cov);
      errs.push_back(mmd(g, *tr.steps.back().predictive, {1.0, 3}));
    }
    if (!prev.empty()) EXPECT_LT(median(errs), median(prev)) << "N=" << n;
    prev = errs;
  }
}

TEST(Rbpf, ZeroCouplingEqualsKalman) {
  const ClgssJointModel joint = make_clgss(5, 0.0);
  const ClgssParams& p = joint.params();
  const Trajectory traj = simulate(joint, 40, 8);
  const KalmanRun kf = kalman_filter(p.decoupled_lgss(), traj.observations);
  for (const SamplerSpec& s : all_samplers()) {
    const RbpfTrace tr = run_rbpf(p, traj.observations, s, 30, 4);
    ASSERT_EQ(tr.final_beliefs.size(), static_cast<std::size_t>(tr.final_weights.size()));
    for (int t = 0; t < 40; ++t) {
      EXPECT_LT((tr.z_steps[t].z_mean - kf.filtered[t].mean).norm(), 1e-8) << to_string(s);
      EXPECT_LT((tr.z_steps[t].z_cov - kf.filtered[t].cov).norm(), 1e-8) << to_string(s);
    }
    EXPECT_NEAR(tr.x_trace.log_evidence(), kf.log_evidence(), 1e-8);
  }
}

TEST(Rbpf, KeepsNTrajectories) {
  const ClgssJointModel joint = make_clgss(6);
  const Trajectory traj = simulate(joint, 10, 1);
  const RbpfTrace tr = run_rbpf(joint.params(), traj.observations, SamplerSpec::stratified(), 64, 2);
  EXPECT_EQ(tr.final_beliefs.size(), 64u);
  EXPECT_NEAR(tr.final_weights.sum(), 1.0, 1e-12);
}

TEST(Rbpf, MatchesJointStateFilter) {
  const ClgssJointModel joint = make_clgss(7);
  const Trajectory traj = simulate(joint, 15, 3);
  const int runs = 6;
  std::vector<std::vector<Vector>> pf;
  for (int r = 0; r < runs; ++r)
    pf.push_back(run_filter(joint, traj.observations, SamplerSpec::stratified(), 20000, 50 + r).filtered_means());
  const RbpfTrace rb = run_rbpf(joint.params(), traj.observations, SamplerSpec::stratified(), 20000, 9);
  for (int t = 0; t < 15; ++t) {
    for (int j = 1; j < 3; ++j) {
      double s = 0.0, s2 = 0.0;
      for (const auto& e : pf) {
        s += e[t][j];
        s2 += e[t][j] * e[t][j];
      }
      const double mean = s / runs;
      const double sd = std::sqrt(std::max(0.0, s2 / runs - mean * mean) * runs / (runs - 1));
      // both sides carry Monte Carlo error; the RBPF side is no noisier than one PF run
      EXPECT_NEAR(rb.z_steps[t].z_mean[j - 1], mean, 3.0 * sd * std::sqrt(1.0 + 1.0 / runs) + 1e-3)
          << "t=" << t << " j=" << j;
    }
  }
}

}  // namespace
}  // namespace skh
