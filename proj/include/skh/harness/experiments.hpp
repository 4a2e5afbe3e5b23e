#pragma once

// Experiment grids for quadrature and filtering, run on a bounded worker pool.
// Rows come back in grid order whatever the completion order, so a config
// always yields the same CSV apart from the runtime column.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "skh/exact_filters.hpp"
#include "skh/fw_quad.hpp"
#include "skh/harness/config.hpp"
#include "skh/harness/csv.hpp"
#include "skh/kernel.hpp"
#include "skh/particle_filter.hpp"
#include "skh/qmc.hpp"
#include "skh/sampling.hpp"
#include "skh/sobol.hpp"
#include "skh/ssm.hpp"

#ifndef SKH_VERSION
#define SKH_VERSION "0.1.0"
#endif

namespace skh::harness {

inline std::string version_string() { return std::string("skh-") + SKH_VERSION; }

struct MetricRow {
  std::string experiment;
  std::string method;
  std::optional<double> sigma2;
  std::optional<int> n;
  std::optional<std::uint64_t> seed;  ///< seed (quad) or batch index (filter)
  std::string metric;                 ///< rmse | mmd | mean_err | logZ_err | slope
  double value = 0.0;
  double runtime_ms = 0.0;
};

inline const std::vector<std::string>& row_header() {
  static const std::vector<std::string> h{"experiment", "method", "sigma2",      "N",           "seed",
                                          "metric",     "value",  "runtime_ms", "config_hash", "version"};
  return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
  return hex64(fnv1a64(c.source + (c.full_scale ? "\n#full-scale\n" : "")));
}

inline void write_rows(std::ostream& out, const std::vector<MetricRow>& rows, const std::string& hash) {
  write_csv_row(out, row_header());
  const std::string version = version_string();
  for (const MetricRow& r : rows) {
    write_csv_row(out, {r.experiment, r.method, r.sigma2 ? format_double(*r.sigma2) : "",
                        r.n ? std::to_string(*r.n) : "", r.seed ? std::to_string(*r.seed) : "", r.metric,
                        format_double(r.value), format_double(std::round(r.runtime_ms * 1000.0) / 1000.0), hash,
                        version});
  }
}

/// Runs fn(0..n-1) on up to `workers` threads; the first failure in index
/// order is rethrown after all threads finish.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw UsageError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("loglog_slope needs at least two points");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// Quadrature

inline GaussianMixture random_mixture_family(const MixtureSpec& s) {
  Rng rng(s.seed);
  GaussianMixture p;
  double total = 0.0;
  for (int i = 0; i < s.components; ++i) {
    Vector mean(s.dim);
    for (int j = 0; j < s.dim; ++j) mean[j] = s.mean_range * (2.0 * uniform01(rng) - 1.0);
    const double var = s.var_min + (s.var_max - s.var_min) * uniform01(rng);
    const double w = uniform01(rng);
    total += w;
    p.add(w, mean, var * Matrix::Identity(s.dim, s.dim));
  }
  for (double& w : p.weights) w /= total;
  return p;
}

inline std::optional<FwVariant> quad_variant(const std::string& method) {
  if (method == "fw") return FwVariant::FW;
  if (method == "fw-ls") return FwVariant::FW_LS;
  if (method == "fcfw") return FwVariant::FCFW;
  return std::nullopt;
}

/// Method x sigma2 x seed grid against one mixture from the random family.
/// Rows per N: mmd and mean_err; one slope row per method x sigma2 (log-log
/// fit of the median MMD over seeds against N).
inline std::vector<MetricRow> run_quad_experiment(const ExperimentConfig& c) {
  const GaussianMixture p = random_mixture_family(c.mixture);
  const Vector true_mean = p.mean();
  const int d = p.dim();
  std::vector<int> grid = c.n_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const int n_max = grid.back();
  for (const std::string& m : c.methods) {
    if (quad_variant(m) && c.m < n_max) throw UsageError("quad: M must be >= the largest N for " + m);
  }

  std::vector<std::unique_ptr<MeanMap>> maps;
  std::vector<double> sqnorms;
  for (double s2 : c.sigma2) {
    maps.push_back(std::make_unique<MeanMap>(p, KernelConfig{s2, d}));
    sqnorms.push_back(maps.back()->squared_norm());
  }

  struct Item {
    std::size_t method, sigma, seed;
  };
  std::vector<Item> items;
  for (std::size_t mi = 0; mi < c.methods.size(); ++mi)
    for (std::size_t si = 0; si < c.sigma2.size(); ++si)
      for (std::size_t ki = 0; ki < c.seeds.size(); ++ki) items.push_back({mi, si, ki});

  std::vector<std::vector<MetricRow>> results(items.size());
  parallel_for(items.size(), c.workers, [&](std::size_t idx) {
    const Item& it = items[idx];
    const std::string& method = c.methods[it.method];
    const double s2 = c.sigma2[it.sigma];
    const KernelConfig k{s2, d};
    const MeanMap& mu = *maps[it.sigma];
    const std::uint64_t seed = c.seeds[it.seed];
    std::vector<MetricRow>& rows = results[idx];
    auto emit = [&](int n, double mmd_value, const Vector& mean, double ms) {
      rows.push_back({"quad", method, s2, n, seed, "mmd", mmd_value, ms});
      rows.push_back({"quad", method, s2, n, seed, "mean_err", (mean - true_mean).norm(), ms});
    };

    if (method == "mc") {
      for (int n : grid) {
        const Stopwatch sw;
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(n), 1}));
        const WeightedParticleSet q = sample_mixture_iid(p, n, rng);
        emit(n, mmd(mu, sqnorms[it.sigma], q, k), q.mean(), sw.ms());
      }
    } else if (method == "qmc") {
      const std::uint64_t offset = 1 + derive_seed(seed, {2}) % (std::uint64_t{1} << 24);
      for (int n : grid) {
        const Stopwatch sw;
        SobolStream stream(d + 1, offset);
        const WeightedParticleSet q = qmc_sample_mixture(p, n, stream);
        emit(n, mmd(mu, sqnorms[it.sigma], q, k), q.mean(), sw.ms());
      }
    } else {
      const Stopwatch sw;
      Rng rng(derive_seed(seed, {3}));
      const SearchPool pool = make_search_pool(p, mu, c.m, rng);
      QuadratureOptions opt;
      opt.n = n_max;
      opt.variant = *quad_variant(method);
      std::size_t next = 0;
      int iteration = 0;
      opt.observer = [&](const QuadratureState& st) {
        ++iteration;
        while (next < grid.size() && grid[next] == iteration) {
          emit(grid[next], st.fw_error(), st.particles().mean(), sw.ms());
          ++next;
        }
      };
      const QuadratureResult r = fw_quad_on_pool(pool, sqnorms[it.sigma], k, opt);
      // early convergence: the remaining N reuse the final iterate
      for (; next < grid.size(); ++next) emit(grid[next], r.fw_error, r.particles.mean(), sw.ms());
    }
  });

  std::vector<MetricRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  for (const std::string& method : c.methods) {
    for (double s2 : c.sigma2) {
      if (grid.size() < 2) continue;
      std::vector<double> xs, ys;
      for (int n : grid) {
        std::vector<double> vals;
        for (const MetricRow& r : rows)
          if (r.method == method && r.sigma2 == s2 && r.n == n && r.metric == "mmd") vals.push_back(r.value);
        xs.push_back(n);
        ys.push_back(std::max(median_of(vals), std::numeric_limits<double>::min()));
      }
      rows.push_back({"quad", method, s2, std::nullopt, std::nullopt, "slope", loglog_slope(xs, ys), 0.0});
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Filtering

inline SamplerSpec sampler_for(const std::string& method, double sigma2, int m) {
  if (method == "pf") return SamplerSpec::stratified();
  if (method == "pf-multinomial") return SamplerSpec::multinomial();
  if (method == "qmc") return SamplerSpec::qmc();
  if (method == "skh-fw") return SamplerSpec::skh(FwVariant::FW, sigma2, m);
  if (method == "skh-fw-ls") return SamplerSpec::skh(FwVariant::FW_LS, sigma2, m);
  if (method == "skh-fcfw") return SamplerSpec::skh(FwVariant::FCFW, sigma2, m);
  throw UsageError("unknown filter method '" + method + "'");
}

inline bool uses_kernel(const std::string& method) { return method.rfind("skh-", 0) == 0; }

/// Root mean over t of the squared Euclidean error.
inline double rmse(const std::vector<Vector>& est, const std::vector<Vector>& ref) {
  if (est.size() != ref.size() || est.empty()) throw UsageError("rmse: sequence lengths differ");
  double s = 0.0;
  for (std::size_t t = 0; t < est.size(); ++t) s += (est[t] - ref[t]).squaredNorm();
  return std::sqrt(s / static_cast<double>(est.size()));
}

/// Reference quantities for one batch of observations.
struct BatchReference {
  Trajectory data;
  std::vector<Vector> means;                ///< reference filtered means
  std::vector<GaussianBelief> predictive;   ///< exact p(x_t | y_{1:t-1}) when available
  std::optional<double> log_evidence;       ///< exact log Z_T when available
};

struct TraceRecord {
  std::string method;
  double sigma2 = 0.0;
  int n = 0;
  std::uint64_t batch = 0;
  FilterTrace trace;
};

inline std::unique_ptr<StateSpaceModel> make_model(const ModelSpec& s) {
  if (s.type == "lgss") return std::make_unique<LgssModel>(make_lgss(s.seed, s.dim_x, s.dim_y));
  if (s.type == "jmls") return std::make_unique<JmlsModel>(make_jmls(s.seed));
  if (s.type == "nonlinear") return std::make_unique<NonlinearBenchmarkModel>();
  if (s.type == "clgss") return std::make_unique<ClgssJointModel>(make_clgss(s.seed, s.coupling));
  throw UsageError("unknown model type '" + s.type + "'");
}

inline std::uint64_t batch_data_seed(const ModelSpec& s, std::size_t b) {
  return derive_seed(s.seed, {0xda7aULL, static_cast<std::uint64_t>(b)});
}

inline std::vector<Vector> averaged_means(const std::vector<std::vector<Vector>>& runs) {
  std::vector<Vector> out = runs.front();
  for (std::size_t r = 1; r < runs.size(); ++r)
    for (std::size_t t = 0; t < out.size(); ++t) out[t] += runs[r][t];
  for (Vector& v : out) v /= static_cast<double>(runs.size());
  return out;
}

inline BatchReference filter_reference(const StateSpaceModel& model, const ModelSpec& s, int T, std::size_t b) {
  BatchReference ref;
  ref.data = simulate(model, T, batch_data_seed(s, b));
  if (const auto* lg = dynamic_cast<const LgssModel*>(&model)) {
    const KalmanRun kf = kalman_filter(lg->params(), ref.data.observations);
    for (const GaussianBelief& g : kf.filtered) ref.means.push_back(g.mean);
    ref.predictive = kf.predicted;
    ref.log_evidence = kf.log_evidence();
  } else if (const auto* jm = dynamic_cast<const JmlsModel*>(&model)) {
    const JmlsExactResult ex = jmls_exact_filter(jm->params(), ref.data.observations);
    for (const MixtureMoments& m : ex.filtered) ref.means.push_back(m.mean);
    ref.log_evidence = ex.log_evidence;
  } else {
    std::vector<std::vector<Vector>> runs;
    for (int r = 0; r < s.reference_runs; ++r) {
      const std::uint64_t seed = derive_seed(s.seed, {0x4efULL, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(r)});
      runs.push_back(run_filter(model, ref.data.observations, SamplerSpec::stratified(), s.reference_particles, seed)
                         .filtered_means());
    }
    ref.means = averaged_means(runs);
  }
  return ref;
}

inline BatchReference rbpf_reference(const ClgssJointModel& model, const ModelSpec& s, int T, std::size_t b) {
  BatchReference ref;
  ref.data = simulate(model, T, batch_data_seed(s, b));
  std::vector<std::vector<Vector>> runs;
  for (int r = 0; r < s.reference_runs; ++r) {
    const std::uint64_t seed = derive_seed(s.seed, {0x4efULL, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(r)});
    runs.push_back(run_rbpf(model.params(), ref.data.observations, SamplerSpec::stratified(), s.reference_particles, seed)
                       .x_trace.filtered_means());
  }
  ref.means = averaged_means(runs);
  return ref;
}

struct FilterExperimentResult {
  std::vector<MetricRow> rows;
  std::vector<TraceRecord> traces;  ///< filled when requested
};

/// Method x sigma2 x N x batch grid. Each batch simulates fresh observations
/// and computes its reference (Kalman, exhaustive mode enumeration, or the
/// averaged large particle filter). Kernel-free methods do not depend on
/// sigma2; their rows repeat per sigma2 so MMD columns line up.
inline FilterExperimentResult run_filter_experiment(const ExperimentConfig& c, bool keep_traces = false) {
  const bool rbpf = c.kind == ExperimentKind::Rbpf;
  const std::string kind = to_string(c.kind);
  std::unique_ptr<StateSpaceModel> model = make_model(c.model);
  const auto* clgss = dynamic_cast<const ClgssJointModel*>(model.get());
  if (rbpf && !clgss) throw UsageError("rbpf experiments need the clgss model");

  std::vector<BatchReference> refs(c.batches);
  parallel_for(refs.size(), c.workers, [&](std::size_t b) {
    refs[b] = rbpf ? rbpf_reference(*clgss, c.model, c.T, b) : filter_reference(*model, c.model, c.T, b);
  });

  struct Item {
    std::size_t method, sigma, n, batch;
  };
  std::vector<Item> items;
  for (std::size_t mi = 0; mi < c.methods.size(); ++mi)
    for (std::size_t si = 0; si < c.sigma2.size(); ++si)
      for (std::size_t ni = 0; ni < c.n_grid.size(); ++ni)
        for (std::size_t b = 0; b < refs.size(); ++b) items.push_back({mi, si, ni, b});

  std::vector<std::vector<MetricRow>> results(items.size());
  std::vector<std::optional<TraceRecord>> traces(items.size());
  parallel_for(items.size(), c.workers, [&](std::size_t idx) {
    const Item& it = items[idx];
    const std::string& method = c.methods[it.method];
    const double s2 = c.sigma2[it.sigma];
    const int n = c.n_grid[it.n];
    const BatchReference& ref = refs[it.batch];
    const SamplerSpec spec = sampler_for(method, s2, c.m);
    const std::uint64_t seed = derive_seed(c.base_seed, {static_cast<std::uint64_t>(it.batch),
                                                         static_cast<std::uint64_t>(n),
                                                         static_cast<std::uint64_t>(it.method)});
    const bool want_mmd = !ref.predictive.empty();
    const Stopwatch sw;
    FilterTrace trace = rbpf ? run_rbpf(clgss->params(), ref.data.observations, spec, n, seed).x_trace
                             : run_filter(*model, ref.data.observations, spec, n, seed, {want_mmd});
    const double ms = sw.ms();
    std::vector<MetricRow>& rows = results[idx];
    const auto batch = static_cast<std::uint64_t>(it.batch);
    rows.push_back({kind, method, s2, n, batch, "rmse", rmse(trace.filtered_means(), ref.means), ms});
    if (want_mmd) {
      const KernelConfig k{s2, model->dim_x()};
      double total = 0.0;
      for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        const MeanMap mu(GaussianMixture::single(ref.predictive[t].mean, ref.predictive[t].cov), k);
        total += mmd(mu, mu.squared_norm(), *trace.steps[t].predictive, k);
        trace.steps[t].predictive.reset();
        trace.steps[t].posterior.reset();
      }
      rows.push_back({kind, method, s2, n, batch, "mmd", total / static_cast<double>(trace.steps.size()), ms});
    }
    if (ref.log_evidence) {
      rows.push_back({kind, method, s2, n, batch, "logZ_err", std::abs(trace.log_evidence() - *ref.log_evidence), ms});
    }
    if (keep_traces) traces[idx] = TraceRecord{method, s2, n, batch, std::move(trace)};
  });

  FilterExperimentResult out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.rows.insert(out.rows.end(), results[i].begin(), results[i].end());
    if (traces[i]) out.traces.push_back(std::move(*traces[i]));
  }
  return out;
}

/// Per-timestep trace CSV: t, method, sigma2, N, seed (batch), filtered mean
/// per dimension, W_t, log Z_t, fw_error, effective N.
inline void write_traces(std::ostream& out, const std::vector<TraceRecord>& traces) {
  const int d = traces.empty() || traces.front().trace.steps.empty()
                    ? 0
                    : static_cast<int>(traces.front().trace.steps.front().filtered_mean.size());
  std::vector<std::string> header{"t", "method", "sigma2", "N", "seed"};
  for (int j = 0; j < d; ++j) header.push_back("mean_" + std::to_string(j));
  for (const char* h : {"W", "logZ", "fw_error", "effective_N"}) header.emplace_back(h);
  write_csv_row(out, header);
  for (const TraceRecord& r : traces) {
    for (std::size_t t = 0; t < r.trace.steps.size(); ++t) {
      const FilterStep& s = r.trace.steps[t];
      std::vector<std::string> row{std::to_string(t + 1), r.method, format_double(r.sigma2), std::to_string(r.n),
                                   std::to_string(r.batch)};
      for (int j = 0; j < d; ++j) row.push_back(format_double(s.filtered_mean[j]));
      row.push_back(format_double(std::exp(s.log_w)));
      row.push_back(format_double(s.log_z));
      row.push_back(format_double(s.fw_error));
      row.push_back(std::to_string(s.particles));
      write_csv_row(out, row);
    }
  }
}

// ---------------------------------------------------------------------------
// Summaries

/// Linear interpolation between order statistics at position (n - 1) q.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw UsageError("quantile of an empty set");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct SummaryRow {
  std::string experiment, method, sigma2, n, metric;
  std::size_t count = 0;
  double median = 0.0, q25 = 0.0, q75 = 0.0, min = 0.0, max = 0.0;
};

inline SummaryRow summarize_values(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  SummaryRow s;
  s.count = v.size();
  s.median = quantile_sorted(v, 0.5);
  s.q25 = quantile_sorted(v, 0.25);
  s.q75 = quantile_sorted(v, 0.75);
  s.min = v.front();
  s.max = v.back();
  return s;
}

/// Groups metric rows (with header) by experiment, method, sigma2, N and
/// metric in order of first appearance. Rows whose value does not parse as a
/// finite number are skipped; groups left empty are dropped with a warning.
inline std::vector<SummaryRow> summarize(const std::vector<std::vector<std::string>>& csv,
                                         std::vector<std::string>* warnings = nullptr) {
  if (csv.empty()) throw UsageError("summarize: no header row");
  const std::vector<std::string>& header = csv.front();
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw UsageError("summarize: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ce = column("experiment"), cm = column("method"), cs = column("sigma2"), cn = column("N"),
                    cmet = column("metric"), cv = column("value");
  struct Group {
    SummaryRow key;
    std::vector<double> values;
  };
  std::vector<Group> groups;
  for (std::size_t i = 1; i < csv.size(); ++i) {
    const std::vector<std::string>& r = csv[i];
    if (r.size() == 1 && r[0].empty()) continue;
    if (r.size() != header.size()) throw UsageError("summarize: row " + std::to_string(i + 1) + " has wrong width");
    auto g = std::find_if(groups.begin(), groups.end(), [&](const Group& gr) {
      return gr.key.experiment == r[ce] && gr.key.method == r[cm] && gr.key.sigma2 == r[cs] && gr.key.n == r[cn] &&
             gr.key.metric == r[cmet];
    });
    if (g == groups.end()) {
      Group ng;
      ng.key.experiment = r[ce];
      ng.key.method = r[cm];
      ng.key.sigma2 = r[cs];
      ng.key.n = r[cn];
      ng.key.metric = r[cmet];
      groups.push_back(std::move(ng));
      g = groups.end() - 1;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(r[cv].data(), r[cv].data() + r[cv].size(), v);
    if (ec == std::errc() && ptr == r[cv].data() + r[cv].size() && std::isfinite(v)) {
      g->values.push_back(v);
    } else if (warnings) {
      warnings->push_back("row " + std::to_string(i + 1) + ": non-numeric value '" + r[cv] + "' skipped");
    }
  }
  std::vector<SummaryRow> out;
  for (Group& g : groups) {
    if (g.values.empty()) {
      if (warnings) {
        warnings->push_back("group " + g.key.method + "/" + g.key.metric + " N=" + g.key.n + " has no values; omitted");
      }
      continue;
    }
    SummaryRow s = summarize_values(std::move(g.values));
    s.experiment = g.key.experiment;
    s.method = g.key.method;
    s.sigma2 = g.key.sigma2;
    s.n = g.key.n;
    s.metric = g.key.metric;
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_summary(std::ostream& out, const std::vector<SummaryRow>& rows) {
  write_csv_row(out, {"experiment", "method", "sigma2", "N", "metric", "count", "median", "q25", "q75", "min", "max"});
  for (const SummaryRow& s : rows) {
    write_csv_row(out, {s.experiment, s.method, s.sigma2, s.n, s.metric, std::to_string(s.count),
                        format_double(s.median), format_double(s.q25), format_double(s.q75), format_double(s.min),
                        format_double(s.max)});
  }
}

}  // namespace skh::harness
