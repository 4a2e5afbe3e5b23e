#pragma once

// State-space models with Gaussian-mixture transitions:
//   x_1 ~ p(x_1),  x_{t+1} ~ p(. | x_t),  y_t ~ p(. | x_t).
// A model may carry a discrete mode r_t alongside the continuous state (the
// jump Markov system); each transition component is tagged with the mode it
// leads to. Kernels and quadrature only ever see the continuous part.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "skh/errors.hpp"
#include "skh/kernel.hpp"
#include "skh/linalg.hpp"
#include "skh/sampling.hpp"

namespace skh {

/// Gaussian mixture whose components carry the discrete mode they lead to.
struct ModeMixture {
  GaussianMixture mixture;
  std::vector<int> modes;

  void add(double w, Vector mean, Matrix cov, int mode = 0) {
    mixture.add(w, std::move(mean), std::move(cov));
    modes.push_back(mode);
  }
};

class StateSpaceModel {
 public:
  virtual ~StateSpaceModel() = default;

  virtual std::string name() const = 0;
  virtual int dim_x() const = 0;
  virtual int dim_y() const = 0;
  virtual int num_modes() const { return 1; }

  virtual ModeMixture initial() const = 0;
  /// p(x_{t+1}, r_{t+1} | x_t, r_t); t is the current (1-based) step.
  virtual ModeMixture transition(const Vector& x, int mode, int t) const = 0;
  /// log p(y_t | x_t, r_t)
  virtual double log_likelihood(const Vector& x, int mode, const Vector& y, int t) const = 0;
  virtual Vector sample_observation(const Vector& x, int mode, int t, Rng& rng) const = 0;
};

/// Cached Gaussian observation noise: log N(residual | 0, R).
class GaussianNoise {
 public:
  GaussianNoise() = default;
  explicit GaussianNoise(const Matrix& cov) : cov_(cov), factor_(psd_factor(cov)) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) {
      chol_ = llt.matrixL();
      log_norm_ = -0.5 * static_cast<double>(cov.rows()) * kLog2Pi - chol_.diagonal().array().log().sum();
      definite_ = true;
    }
  }

  const Matrix& covariance() const { return cov_; }

  double log_pdf(const Vector& residual) const {
    if (!definite_) throw NumericalError("observation noise covariance is singular");
    const Vector z = chol_.triangularView<Eigen::Lower>().solve(residual);
    return log_norm_ - 0.5 * z.squaredNorm();
  }

  Vector sample(Rng& rng) const { return factor_ * standard_normal(static_cast<int>(cov_.rows()), rng); }

 private:
  Matrix cov_;
  Matrix factor_;
  Matrix chol_;
  double log_norm_ = 0.0;
  bool definite_ = false;
};

// ---------------------------------------------------------------------------
// Linear Gaussian state-space model

struct LgssParams {
  Matrix A, C, Q, R;
  Vector x1_mean;
  Matrix x1_cov;

  int dim_x() const { return static_cast<int>(A.rows()); }
  int dim_y() const { return static_cast<int>(C.rows()); }

  void validate() const {
    const int d = dim_x();
    if (A.cols() != d || C.cols() != d || Q.rows() != d || Q.cols() != d || x1_mean.size() != d ||
        x1_cov.rows() != d || x1_cov.cols() != d || R.rows() != dim_y() || R.cols() != dim_y()) {
      throw UsageError("LGSS parameter shapes are inconsistent");
    }
  }
};

class LgssModel : public StateSpaceModel {
 public:
  explicit LgssModel(LgssParams p) : p_(std::move(p)), noise_(p_.R) { p_.validate(); }

  const LgssParams& params() const { return p_; }

  std::string name() const override { return "lgss"; }
  int dim_x() const override { return p_.dim_x(); }
  int dim_y() const override { return p_.dim_y(); }

  ModeMixture initial() const override {
    ModeMixture m;
    m.add(1.0, p_.x1_mean, p_.x1_cov);
    return m;
  }
  ModeMixture transition(const Vector& x, int, int) const override {
    ModeMixture m;
    m.add(1.0, p_.A * x, p_.Q);
    return m;
  }
  double log_likelihood(const Vector& x, int, const Vector& y, int) const override {
    return noise_.log_pdf(y - p_.C * x);
  }
  Vector sample_observation(const Vector& x, int, int, Rng& rng) const override {
    return p_.C * x + noise_.sample(rng);
  }

 private:
  LgssParams p_;
  GaussianNoise noise_;
};

/// Rank test of [C; CA; ...; CA^{d-1}].
inline bool is_observable(const Matrix& a, const Matrix& c) {
  const auto d = a.rows();
  Matrix obs(c.rows() * d, d);
  Matrix block = c;
  for (Eigen::Index i = 0; i < d; ++i) {
    obs.middleRows(i * c.rows(), c.rows()) = block;
    block = block * a;
  }
  Eigen::JacobiSVD<Matrix> svd(obs);
  const Vector s = svd.singularValues();
  return s.minCoeff() > 1e-10 * s.maxCoeff();
}

/// Random real matrix with eigenvalues drawn in the disk of radius `radius`
/// (real ones on the segment, complex ones in conjugate pairs), rotated by a
/// random orthogonal basis.
inline Matrix random_stable_matrix(int d, Rng& rng, double radius = 0.9) {
  Matrix blocks = Matrix::Zero(d, d);
  int i = 0;
  while (i < d) {
    if (d - i >= 2 && uniform01(rng) < 0.5) {
      const double r = radius * std::sqrt(uniform01(rng));
      const double theta = 2.0 * std::numbers::pi * uniform01(rng);
      const double re = r * std::cos(theta), im = r * std::sin(theta);
      blocks(i, i) = re;
      blocks(i, i + 1) = -im;
      blocks(i + 1, i) = im;
      blocks(i + 1, i + 1) = re;
      i += 2;
    } else {
      blocks(i, i) = radius * (2.0 * uniform01(rng) - 1.0);
      i += 1;
    }
  }
  Matrix g(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) g(r, c) = standard_normal(1, rng)[0];
  const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();
  return q * blocks * q.transpose();
}

inline double spectral_radius(const Matrix& a) {
  return Eigen::EigenSolver<Matrix>(a, false).eigenvalues().cwiseAbs().maxCoeff();
}

/// Stable, observable (A, C) with standard-normal C; retries up to 100 times.
inline std::pair<Matrix, Matrix> random_observable_system(int d, int m, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Matrix a = random_stable_matrix(d, rng);
    Matrix c(m, d);
    for (int r = 0; r < m; ++r)
      for (int k = 0; k < d; ++k) c(r, k) = standard_normal(1, rng)[0];
    if (is_observable(a, c)) return {a, c};
  }
  throw NumericalError("could not generate an observable system in 100 attempts");
}

/// Random stable observable LGSS with Q = I, R = 0.1 I and x_1 ~ N(0, I).
inline LgssModel make_lgss(std::uint64_t seed, int d, int m) {
  if (d < 1 || m < 1) throw UsageError("make_lgss: dimensions must be >= 1");
  Rng rng(seed);
  auto [a, c] = random_observable_system(d, m, rng);
  return LgssModel({a, c, Matrix::Identity(d, d), 0.1 * Matrix::Identity(m, m), Vector::Zero(d),
                    Matrix::Identity(d, d)});
}

// ---------------------------------------------------------------------------
// Jump Markov linear system
//   P(r_{t+1} = l | r_t = k) = Pi(k, l)
//   x_{t+1} = A_{r_t} x_t + F_{r_t} v_t,   y_t = C_{r_t} x_t + G_{r_t} e_t

struct JmlsMode {
  Matrix A, F, C, G;
};

struct JmlsParams {
  Matrix Pi;
  std::vector<JmlsMode> modes;
  Vector initial_mode;  ///< distribution of r_1
  Vector x1_mean;
  Matrix x1_cov;

  int dim_x() const { return static_cast<int>(x1_mean.size()); }
  int dim_y() const { return static_cast<int>(modes.front().C.rows()); }

  void validate() const {
    const auto k = static_cast<Eigen::Index>(modes.size());
    if (k < 1 || Pi.rows() != k || Pi.cols() != k || initial_mode.size() != k) {
      throw UsageError("JMLS: mode count mismatch");
    }
    for (Eigen::Index r = 0; r < k; ++r) {
      if (std::abs(Pi.row(r).sum() - 1.0) > 1e-12 || (Pi.row(r).array() < 0.0).any()) {
        throw UsageError("JMLS: transition matrix rows must be probability vectors");
      }
    }
    if (std::abs(initial_mode.sum() - 1.0) > 1e-12) throw UsageError("JMLS: initial mode distribution");
  }
};

class JmlsModel : public StateSpaceModel {
 public:
  explicit JmlsModel(JmlsParams p) : p_(std::move(p)) {
    p_.validate();
    for (const JmlsMode& m : p_.modes) {
      process_.push_back(m.F * m.F.transpose());
      noise_.emplace_back(m.G * m.G.transpose());
    }
  }

  const JmlsParams& params() const { return p_; }

  std::string name() const override { return "jmls"; }
  int dim_x() const override { return p_.dim_x(); }
  int dim_y() const override { return p_.dim_y(); }
  int num_modes() const override { return static_cast<int>(p_.modes.size()); }

  ModeMixture initial() const override {
    ModeMixture m;
    for (int r = 0; r < num_modes(); ++r) {
      if (p_.initial_mode[r] > 0.0) m.add(p_.initial_mode[r], p_.x1_mean, p_.x1_cov, r);
    }
    return m;
  }
  ModeMixture transition(const Vector& x, int mode, int) const override {
    ModeMixture m;
    const Vector mean = p_.modes[mode].A * x;
    for (int l = 0; l < num_modes(); ++l) {
      if (p_.Pi(mode, l) > 0.0) m.add(p_.Pi(mode, l), mean, process_[mode], l);
    }
    return m;
  }
  double log_likelihood(const Vector& x, int mode, const Vector& y, int) const override {
    return noise_[mode].log_pdf(y - p_.modes[mode].C * x);
  }
  Vector sample_observation(const Vector& x, int mode, int, Rng& rng) const override {
    return p_.modes[mode].C * x + noise_[mode].sample(rng);
  }

 private:
  JmlsParams p_;
  std::vector<Matrix> process_;
  std::vector<GaussianNoise> noise_;
};

/// Two random stable observable 2-d modes, Pi = [[0.7, 0.3], [0.3, 0.7]],
/// F = I, G = 1, scalar observations, r_1 uniform, x_1 ~ N(0, I).
inline JmlsModel make_jmls(std::uint64_t seed) {
  Rng rng(seed);
  JmlsParams p;
  p.Pi.resize(2, 2);
  p.Pi << 0.7, 0.3, 0.3, 0.7;
  for (int r = 0; r < 2; ++r) {
    auto [a, c] = random_observable_system(2, 1, rng);
    p.modes.push_back({a, Matrix::Identity(2, 2), c, Matrix::Identity(1, 1)});
  }
  p.initial_mode = Vector::Constant(2, 0.5);
  p.x1_mean = Vector::Zero(2);
  p.x1_cov = Matrix::Identity(2, 2);
  return JmlsModel(std::move(p));
}

// ---------------------------------------------------------------------------
// Nonlinear benchmark
//   x_{t+1} = 0.5 x_t + 25 x_t / (1 + x_t^2) + 8 cos(1.2 t) + v_t
//   y_t     = 0.05 x_t^2 + e_t,      v_t, e_t ~ N(0, 1),  x_1 ~ N(0, 1)

inline double benchmark_drift(double x, int t) { return 0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * std::cos(1.2 * t); }

class NonlinearBenchmarkModel : public StateSpaceModel {
 public:
  std::string name() const override { return "nonlinear"; }
  int dim_x() const override { return 1; }
  int dim_y() const override { return 1; }

  ModeMixture initial() const override {
    ModeMixture m;
    m.add(1.0, Vector::Zero(1), Matrix::Identity(1, 1));
    return m;
  }
  ModeMixture transition(const Vector& x, int, int t) const override {
    ModeMixture m;
    m.add(1.0, Vector::Constant(1, benchmark_drift(x[0], t)), Matrix::Identity(1, 1));
    return m;
  }
  double log_likelihood(const Vector& x, int, const Vector& y, int) const override {
    const double r = y[0] - 0.05 * x[0] * x[0];
    return -0.5 * (kLog2Pi + r * r);
  }
  Vector sample_observation(const Vector& x, int, int, Rng& rng) const override {
    return Vector::Constant(1, 0.05 * x[0] * x[0] + standard_normal(1, rng)[0]);
  }
};

inline NonlinearBenchmarkModel make_nonlinear_benchmark() { return {}; }

// ---------------------------------------------------------------------------
// Conditionally linear Gaussian model: scalar nonlinear part x, linear part z.
//   x_{t+1} = drift(x_t, t) + v_t,             v_t ~ N(0, x_noise)
//   z_{t+1} = A_z(x_t) z_t + w_t,              w_t ~ N(0, Q_z)
//   y_t     = h(x_t) + C_z z_t + e_t,          e_t ~ N(0, R)
// with A_z(x) = rho * rotation(coupling * atan(x)) and
// h(x) = coupling * (0.05 x^2, 0, ...). coupling = 0 decouples z from x and
// the z-part is a plain LGSS.

struct ClgssParams {
  double coupling = 1.0;
  double x_noise = 1.0;
  double x1_mean = 0.0;
  double x1_var = 1.0;
  double rho = 0.8;
  Matrix Qz;
  Matrix Cz;
  Matrix R;
  Vector z1_mean;
  Matrix z1_cov;

  int dim_z() const { return static_cast<int>(z1_mean.size()); }
  int dim_y() const { return static_cast<int>(Cz.rows()); }

  double drift(double x, int t) const { return benchmark_drift(x, t); }

  Matrix Az(double x) const {
    const double th = coupling * std::atan(x);
    Matrix a(2, 2);
    a << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    return rho * a;
  }

  Vector h(double x) const {
    Vector out = Vector::Zero(dim_y());
    out[0] = coupling * 0.05 * x * x;
    return out;
  }

  /// The z-part as an LGSS (exact when coupling == 0).
  LgssParams decoupled_lgss() const { return {Az(0.0), Cz, Qz, R, z1_mean, z1_cov}; }
};

/// Joint (x, z) model used as a full-state reference for the RBPF.
class ClgssJointModel : public StateSpaceModel {
 public:
  explicit ClgssJointModel(ClgssParams p) : p_(std::move(p)), noise_(p_.R) {}

  const ClgssParams& params() const { return p_; }

  std::string name() const override { return "clgss"; }
  int dim_x() const override { return 1 + p_.dim_z(); }
  int dim_y() const override { return p_.dim_y(); }

  ModeMixture initial() const override {
    Vector m(dim_x());
    m << p_.x1_mean, p_.z1_mean;
    Matrix c = Matrix::Zero(dim_x(), dim_x());
    c(0, 0) = p_.x1_var;
    c.bottomRightCorner(p_.dim_z(), p_.dim_z()) = p_.z1_cov;
    ModeMixture mm;
    mm.add(1.0, m, c);
    return mm;
  }
  ModeMixture transition(const Vector& s, int, int t) const override {
    Vector m(dim_x());
    m << p_.drift(s[0], t), p_.Az(s[0]) * s.tail(p_.dim_z());
    Matrix c = Matrix::Zero(dim_x(), dim_x());
    c(0, 0) = p_.x_noise;
    c.bottomRightCorner(p_.dim_z(), p_.dim_z()) = p_.Qz;
    ModeMixture mm;
    mm.add(1.0, m, c);
    return mm;
  }
  double log_likelihood(const Vector& s, int, const Vector& y, int) const override {
    return noise_.log_pdf(y - p_.h(s[0]) - p_.Cz * s.tail(p_.dim_z()));
  }
  Vector sample_observation(const Vector& s, int, int, Rng& rng) const override {
    return p_.h(s[0]) + p_.Cz * s.tail(p_.dim_z()) + noise_.sample(rng);
  }

 private:
  ClgssParams p_;
  GaussianNoise noise_;
};

/// Small CLGSS test model: z in R^2, y in R^2; `seed` draws C_z.
inline ClgssJointModel make_clgss(std::uint64_t seed, double coupling = 1.0) {
  Rng rng(seed);
  ClgssParams p;
  p.coupling = coupling;
  p.Qz = 0.5 * Matrix::Identity(2, 2);
  p.Cz = Matrix::Identity(2, 2);
  p.Cz(1, 0) = standard_normal(1, rng)[0];
  p.Cz(0, 1) = 0.5 * standard_normal(1, rng)[0];
  p.R = 0.1 * Matrix::Identity(2, 2);
  p.z1_mean = Vector::Zero(2);
  p.z1_cov = Matrix::Identity(2, 2);
  return ClgssJointModel(std::move(p));
}

// ---------------------------------------------------------------------------

struct Trajectory {
  std::vector<Vector> states;
  std::vector<int> modes;
  std::vector<Vector> observations;
};

/// Ancestral sampling of x_{1:T}, r_{1:T}, y_{1:T}.
inline Trajectory simulate(const StateSpaceModel& model, int T, std::uint64_t seed) {
  if (T < 1) throw UsageError("simulate: T must be >= 1");
  Rng rng(seed);
  Trajectory traj;
  auto draw = [&rng](const ModeMixture& mm, Vector& x, int& mode) {
    const int c = multinomial_components(mm.mixture.weights, 1, rng)[0];
    x = mm.mixture.means[c] + psd_factor(mm.mixture.covariances[c]) * standard_normal(mm.mixture.dim(), rng);
    mode = mm.modes[c];
  };
  Vector x;
  int mode = 0;
  draw(model.initial(), x, mode);
  for (int t = 1; t <= T; ++t) {
    traj.states.push_back(x);
    traj.modes.push_back(mode);
    traj.observations.push_back(model.sample_observation(x, mode, t, rng));
    if (t < T) draw(model.transition(x, mode, t), x, mode);
  }
  return traj;
}

}  // namespace skh
