#pragma once

// Particle filtering in joint-predictive form. Each step reweights the
// predictive particles by the likelihood, forms the transition mixture
//   p~_{t+1}(x) = sum_i w_i o_t(x_i) p(x | x_i) / W_t,
// and replaces it by N particles using one of the samplers below. The SKH
// sampler runs Frank-Wolfe quadrature against the mixture's mean map.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "skh/errors.hpp"
#include "skh/exact_filters.hpp"
#include "skh/fw_quad.hpp"
#include "skh/kernel.hpp"
#include "skh/qmc.hpp"
#include "skh/sampling.hpp"
#include "skh/sobol.hpp"
#include "skh/ssm.hpp"

namespace skh {

enum class SamplerKind { MC_MULTINOMIAL, MC_STRATIFIED, QMC_SOBOL, SKH };

struct SamplerSpec {
  SamplerKind kind = SamplerKind::MC_STRATIFIED;
  FwVariant variant = FwVariant::FW;  ///< SKH only
  int pool_size = 20000;              ///< SKH search points M per step
  double sigma2 = 1.0;                ///< SKH kernel bandwidth

  static SamplerSpec multinomial() { return {SamplerKind::MC_MULTINOMIAL}; }
  static SamplerSpec stratified() { return {SamplerKind::MC_STRATIFIED}; }
  static SamplerSpec qmc() { return {SamplerKind::QMC_SOBOL}; }
  static SamplerSpec skh(FwVariant v, double sigma2, int pool_size = 20000) {
    return {SamplerKind::SKH, v, pool_size, sigma2};
  }
};

inline std::string to_string(const SamplerSpec& s) {
  switch (s.kind) {
    case SamplerKind::MC_MULTINOMIAL:
      return "pf-multinomial";
    case SamplerKind::MC_STRATIFIED:
      return "pf";
    case SamplerKind::QMC_SOBOL:
      return "qmc";
    case SamplerKind::SKH:
      return "skh-" + to_string(s.variant);
  }
  return "?";
}

/// Mixture over x_{t+1} with one block per (particle, transition component).
struct TransitionMixture {
  ModeMixture mixture;
  std::vector<int> ancestors;  ///< particle index behind each component
  double log_w = 0.0;          ///< log W_t = log sum_i w_i o_t(x_i)
};

inline constexpr double kDegenerateWeight = 1e-300;

/// Log-likelihood reweighting of a predictive set. Returns the normalized
/// posterior weights and log W_t; throws DegenerateFilterError when
/// W_t < 1e-300.
inline Vector reweight(const WeightedParticleSet& predictive, const std::vector<double>& loglik, int t,
                       double& log_w) {
  const int n = predictive.size();
  std::vector<double> lw(n);
  for (int i = 0; i < n; ++i) {
    lw[i] = predictive.weights[i] > 0.0 ? std::log(predictive.weights[i]) + loglik[i]
                                        : -std::numeric_limits<double>::infinity();
  }
  log_w = log_sum_exp(lw);
  if (!(log_w >= std::log(kDegenerateWeight))) {
    throw DegenerateFilterError(t, "total likelihood weight below 1e-300");
  }
  Vector w(n);
  for (int i = 0; i < n; ++i) w[i] = std::exp(lw[i] - log_w);
  return w / w.sum();
}

/// Posterior r^_t and transition mixture p~_{t+1} from the predictive p^_t.
inline TransitionMixture build_transition_mixture(const WeightedParticleSet& predictive, const StateSpaceModel& model,
                                                  const Vector& y, int t, WeightedParticleSet* posterior = nullptr) {
  predictive.validate();
  const int n = predictive.size();
  std::vector<double> loglik(n);
  for (int i = 0; i < n; ++i) {
    const int mode = predictive.modes.empty() ? 0 : predictive.modes[i];
    loglik[i] = model.log_likelihood(predictive.points.col(i), mode, y, t);
    if (std::isnan(loglik[i])) throw NumericalError("log-likelihood is NaN at t=" + std::to_string(t));
  }
  TransitionMixture out;
  const Vector w = reweight(predictive, loglik, t, out.log_w);
  if (posterior) {
    *posterior = predictive;
    posterior->weights = w;
  }
  for (int i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    const int mode = predictive.modes.empty() ? 0 : predictive.modes[i];
    const ModeMixture tr = model.transition(predictive.points.col(i), mode, t);
    for (std::size_t c = 0; c < tr.mixture.size(); ++c) {
      out.mixture.add(w[i] * tr.mixture.weights[c], tr.mixture.means[c], tr.mixture.covariances[c], tr.modes[c]);
      out.ancestors.push_back(i);
    }
  }
  return out;
}

/// Per-run sampler state: the QMC stream continues across steps.
class StepSampler {
 public:
  StepSampler(SamplerSpec spec, int dim, std::uint64_t seed) : spec_(spec), dim_(dim), seed_(seed) {
    if (spec_.kind == SamplerKind::QMC_SOBOL) {
      if (dim + 1 > SobolStream::kMaxDimension) throw UsageError("QMC sampler: state dimension too large");
      stream_.emplace(dim + 1, 1 + derive_seed(seed, {0x51ULL}) % (std::uint64_t{1} << 24));
    }
    if (spec_.kind == SamplerKind::SKH) {
      KernelConfig{spec_.sigma2, dim}.validate();
      if (spec_.pool_size < 1) throw UsageError("SKH sampler: pool size must be >= 1");
    }
  }

  const SamplerSpec& spec() const { return spec_; }

  /// N particles from the mixture; ancestry holds mixture component indices.
  /// fw_error is set for SKH and 0 otherwise.
  WeightedParticleSet sample(const ModeMixture& mm, int n, int t, double& fw_error) {
    fw_error = 0.0;
    WeightedParticleSet q;
    switch (spec_.kind) {
      case SamplerKind::MC_MULTINOMIAL: {
        Rng rng(derive_seed(seed_, {static_cast<std::uint64_t>(t), 1}));
        q = MixtureSampler(mm.mixture).draw(multinomial_components(mm.mixture.weights, n, rng), rng);
        break;
      }
      case SamplerKind::MC_STRATIFIED: {
        Rng rng(derive_seed(seed_, {static_cast<std::uint64_t>(t), 2}));
        q = MixtureSampler(mm.mixture).draw(stratified_components(mm.mixture.weights, n, rng), rng);
        break;
      }
      case SamplerKind::QMC_SOBOL:
        q = qmc_sample_mixture(mm.mixture, n, *stream_);
        break;
      case SamplerKind::SKH: {
        const KernelConfig k{spec_.sigma2, dim_};
        const MeanMap mu(mm.mixture, k);
        Rng rng(derive_seed(seed_, {static_cast<std::uint64_t>(t), 3}));
        const SearchPool pool = make_search_pool(mm.mixture, mu, std::max(spec_.pool_size, n), rng);
        QuadratureOptions opt;
        opt.n = n;
        opt.variant = spec_.variant;
        QuadratureResult r = fw_quad_on_pool(pool, mu.squared_norm(), k, opt);
        for (int& a : r.particles.ancestry) a = pool.components[a];
        fw_error = r.fw_error;
        q = std::move(r.particles);
        break;
      }
    }
    q.modes.resize(q.size());
    for (int i = 0; i < q.size(); ++i) q.modes[i] = mm.modes[q.ancestry[i]];
    return q;
  }

 private:
  SamplerSpec spec_;
  int dim_;
  std::uint64_t seed_;
  std::optional<SobolStream> stream_;
};

/// One SAMPLE step on a transition mixture; ancestry is mapped back to the
/// particles behind the chosen components.
inline WeightedParticleSet pf_step(StepSampler& sampler, const TransitionMixture& tm, int n, int t,
                                   double& fw_error) {
  WeightedParticleSet q = sampler.sample(tm.mixture, n, t, fw_error);
  for (int& a : q.ancestry) a = tm.ancestors[a];
  return q;
}

struct FilterStep {
  Vector filtered_mean;  ///< mean of r^_t
  double log_w = 0.0;    ///< log W^_t
  double log_z = 0.0;    ///< log Z^_t = sum of log W^_u
  double fw_error = 0.0; ///< SKH quadrature error of p^_t against p~_t
  int particles = 0;     ///< atoms in p^_t with positive weight
  std::optional<WeightedParticleSet> predictive;
  std::optional<WeightedParticleSet> posterior;
};

struct FilterTrace {
  std::string method;
  std::vector<FilterStep> steps;

  double log_evidence() const { return steps.empty() ? 0.0 : steps.back().log_z; }
  std::vector<Vector> filtered_means() const {
    std::vector<Vector> out;
    for (const FilterStep& s : steps) out.push_back(s.filtered_mean);
    return out;
  }
};

struct FilterOptions {
  bool keep_particles = false;
};

/// Algorithm: p^_1 = SAMPLE(p(x_1)); for each t reweight by o_t, form the
/// transition mixture and SAMPLE again.
inline FilterTrace run_filter(const StateSpaceModel& model, const std::vector<Vector>& ys, const SamplerSpec& spec,
                              int n, std::uint64_t seed, const FilterOptions& opt = {}) {
  if (ys.empty()) throw UsageError("run_filter: empty observation sequence");
  if (n < 1) throw UsageError("run_filter: N must be >= 1");
  StepSampler sampler(spec, model.dim_x(), seed);
  FilterTrace trace;
  trace.method = to_string(spec);
  const ModeMixture init = model.initial();
  double fw_error = 0.0;
  WeightedParticleSet predictive = sampler.sample(init, n, 0, fw_error);
  double log_z = 0.0;
  for (std::size_t ti = 0; ti < ys.size(); ++ti) {
    const int t = static_cast<int>(ti) + 1;
    FilterStep step;
    step.fw_error = fw_error;
    step.particles = static_cast<int>((predictive.weights.array() > 0.0).count());
    WeightedParticleSet posterior;
    const TransitionMixture tm = build_transition_mixture(predictive, model, ys[ti], t, &posterior);
    log_z += tm.log_w;
    step.log_w = tm.log_w;
    step.log_z = log_z;
    step.filtered_mean = posterior.mean();
    if (opt.keep_particles) {
      step.predictive = predictive;
      step.posterior = posterior;
    }
    trace.steps.push_back(std::move(step));
    if (ti + 1 < ys.size()) predictive = pf_step(sampler, tm, n, t, fw_error);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Rao-Blackwellized filter for the conditionally linear model: particles over
// the nonlinear coordinate x, each carrying a Kalman belief over z.

struct RbpfStep {
  Vector z_mean;  ///< mixture mean of the filtered z-beliefs
  Matrix z_cov;   ///< mixture covariance
};

struct RbpfTrace {
  FilterTrace x_trace;  ///< filtered_mean holds the joint (x, z) mean
  std::vector<RbpfStep> z_steps;
  std::vector<GaussianBelief> final_beliefs;  ///< filtered z-belief per final particle
  Vector final_weights;
};

inline RbpfTrace run_rbpf(const ClgssParams& p, const std::vector<Vector>& ys, const SamplerSpec& spec, int n,
                          std::uint64_t seed) {
  if (ys.empty()) throw UsageError("run_rbpf: empty observation sequence");
  if (n < 1) throw UsageError("run_rbpf: N must be >= 1");
  StepSampler sampler(spec, 1, seed);
  RbpfTrace out;
  out.x_trace.method = to_string(spec);

  ModeMixture init;
  init.add(1.0, Vector::Constant(1, p.x1_mean), Matrix::Constant(1, 1, p.x1_var));
  double fw_error = 0.0;
  WeightedParticleSet predictive = sampler.sample(init, n, 0, fw_error);
  std::vector<GaussianBelief> beliefs(predictive.size(), GaussianBelief{p.z1_mean, p.z1_cov, 0.0});
  const Matrix xq = Matrix::Constant(1, 1, p.x_noise);
  double log_z = 0.0;

  for (std::size_t ti = 0; ti < ys.size(); ++ti) {
    const int t = static_cast<int>(ti) + 1;
    const int m = predictive.size();
    std::vector<double> loglik(m);
    std::vector<GaussianBelief> updated(m);
    for (int i = 0; i < m; ++i) {
      GaussianBelief prior = beliefs[i];
      prior.log_evidence = 0.0;
      updated[i] = kalman_update(prior, p.Cz, p.R, ys[ti], p.h(predictive.points(0, i)));
      loglik[i] = updated[i].log_evidence;
    }
    double log_w = 0.0;
    const Vector w = reweight(predictive, loglik, t, log_w);
    log_z += log_w;

    RbpfStep zs{Vector::Zero(p.dim_z()), Matrix::Zero(p.dim_z(), p.dim_z())};
    for (int i = 0; i < m; ++i) zs.z_mean += w[i] * updated[i].mean;
    for (int i = 0; i < m; ++i) {
      const Vector dz = updated[i].mean - zs.z_mean;
      zs.z_cov += w[i] * (updated[i].cov + dz * dz.transpose());
    }
    FilterStep step;
    step.filtered_mean.resize(1 + p.dim_z());
    step.filtered_mean << predictive.points.row(0).dot(w), zs.z_mean;
    step.log_w = log_w;
    step.log_z = log_z;
    step.fw_error = fw_error;
    step.particles = static_cast<int>((predictive.weights.array() > 0.0).count());
    out.x_trace.steps.push_back(std::move(step));
    out.z_steps.push_back(std::move(zs));

    if (ti + 1 == ys.size()) {
      out.final_beliefs = std::move(updated);
      out.final_weights = w;
      break;
    }
    TransitionMixture tm;
    tm.log_w = log_w;
    for (int i = 0; i < m; ++i) {
      if (w[i] == 0.0) continue;
      tm.mixture.add(w[i], Vector::Constant(1, p.drift(predictive.points(0, i), t)), xq);
      tm.ancestors.push_back(i);
    }
    WeightedParticleSet next = pf_step(sampler, tm, n, t, fw_error);
    std::vector<GaussianBelief> next_beliefs(next.size());
    for (int j = 0; j < next.size(); ++j) {
      const int a = next.ancestry[j];
      next_beliefs[j] = kalman_predict(updated[a], p.Az(predictive.points(0, a)), p.Qz);
    }
    predictive = std::move(next);
    beliefs = std::move(next_beliefs);
  }
  return out;
}

}  // namespace skh
