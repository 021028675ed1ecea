#pragma once

// Random environments: seeded samplers producing coefficient fields
// x -> a(tau_x omega) on a torus.
//
//  * bernoulli          a(x) = (1 + gamma Y_x) I, Y_x = +-1 i.i.d.
//  * iid_general        i.i.d. site matrices from a finite mixture or a uniform scalar law
//  * massive_field      a(x) = a~(phi(x)), phi from exp[-sum V(grad phi) + m^2 phi^2 / 2]
//  * massless_gradient  a(x) = a~(omega(x)), omega = grad phi of the m -> 0 gradient measure
//                       (exact i.i.d. sampling in d = 1, small-mass proxy for d >= 2)

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hlab/fft.hpp"
#include "hlab/lattice.hpp"
#include "hlab/parallel.hpp"
#include "hlab/rng.hpp"
#include "hlab/stats.hpp"

namespace hlab {

struct EllipticityBounds {
  double lambda = 1.0;
  double Lambda = 1.0;

  void validate() const {
    if (!(lambda > 0.0) || !(Lambda >= lambda))
      throw InvalidArgument("EllipticityBounds: need 0 < lambda <= Lambda, got lambda=" + std::to_string(lambda) +
                            " Lambda=" + std::to_string(Lambda));
  }
  /// 1 - lambda / Lambda, the norm bound on b = I - a / Lambda.
  double contraction() const { return 1.0 - lambda / Lambda; }
};

/// Largest distance of the eigenvalues of the symmetric part of m from
/// [lo, hi], plus its asymmetry.
inline double ellipticity_violation(const Eigen::MatrixXd& m, const EllipticityBounds& b) {
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return std::max({asym, b.lambda - ev.minCoeff(), ev.maxCoeff() - b.Lambda, 0.0});
}

/// One realization of the symmetric matrix field a(x).
struct CoefficientField {
  RealField a;
  EllipticityBounds bounds;
  std::string kind;
  std::uint64_t seed = 0;
  std::uint64_t sample_index = 0;

  const TorusGrid& grid() const noexcept { return a.grid(); }
  int dim() const noexcept { return a.grid().dim(); }

  double entry(std::size_t x, int i, int j) const noexcept { return a(i * dim() + j, x); }

  Eigen::MatrixXd at(std::size_t x) const {
    const int d = dim();
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = entry(x, i, j);
    return m;
  }

  void set(std::size_t x, const Eigen::MatrixXd& m) {
    const int d = dim();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) a(i * d + j, x) = m(i, j);
  }

  double max_violation() const {
    double worst = 0.0;
    for (std::size_t x = 0; x < a.sites(); ++x) worst = std::max(worst, ellipticity_violation(at(x), bounds));
    return worst;
  }

  /// Throws if any site is asymmetric or leaves [lambda, Lambda] by more than tol.
  void validate(double tol = 1e-12) const {
    bounds.validate();
    if (a.components() != dim() * dim()) throw InvalidArgument("CoefficientField: expected d*d components");
    const double v = max_violation();
    if (v > tol)
      throw InvalidArgument("CoefficientField(" + kind + "): ellipticity bounds violated by " + std::to_string(v));
  }
};

inline CoefficientField make_constant_field(const TorusGrid& grid, const Eigen::MatrixXd& m, std::string kind = "constant") {
  CoefficientField f{make_matrix_field(grid), {}, std::move(kind)};
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  f.bounds = {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
  for (std::size_t x = 0; x < grid.size(); ++x) f.set(x, m);
  f.validate();
  return f;
}

inline CoefficientField make_constant_field(const TorusGrid& grid, double c) {
  return make_constant_field(grid, c * Eigen::MatrixXd::Identity(grid.dim(), grid.dim()));
}

// ---------------------------------------------------------------------------
// Gradient potentials V(z) = sum_j v(z_j)

/// v(s) = s^2 / 2 + (kappa / lambda4) log cosh(lambda4 s); quadratic when kappa = 0.
/// v'' = 1 + kappa lambda4 sech^2(lambda4 s) lies between 1 and 1 + kappa lambda4.
struct GradientPotential {
  double kappa = 0.0;
  double lambda4 = 1.0;

  static GradientPotential quadratic() { return {}; }
  static GradientPotential logcosh(double kappa, double lambda4) {
    GradientPotential v{kappa, lambda4};
    v.validate();
    return v;
  }

  void validate() const {
    if (!(lambda4 > 0.0)) throw InvalidArgument("GradientPotential: lambda4 must be > 0");
    if (!(1.0 + kappa * lambda4 > 0.0))
      throw InvalidArgument("GradientPotential: need 1 + kappa*lambda4 > 0 for uniform convexity");
  }
  bool is_quadratic() const noexcept { return kappa == 0.0; }

  double value(double s) const noexcept {
    if (kappa == 0.0) return 0.5 * s * s;
    const double t = std::abs(lambda4 * s);
    const double logcosh = t + std::log1p(std::exp(-2.0 * t)) - std::log(2.0);
    return 0.5 * s * s + kappa / lambda4 * logcosh;
  }
  double derivative(double s) const noexcept { return s + kappa * std::tanh(lambda4 * s); }
  double curvature(double s) const noexcept {
    const double c = 1.0 / std::cosh(lambda4 * s);
    return 1.0 + kappa * lambda4 * c * c;
  }
  EllipticityBounds curvature_bounds() const noexcept {
    const double other = 1.0 + kappa * lambda4;
    return {std::min(1.0, other), std::max(1.0, other)};
  }
};

// ---------------------------------------------------------------------------
// MCMC

enum class McmcPreconditioner { fourier, none };

/// Controls for the MALA sampler. Steps are global MALA updates.
struct McmcControls {
  int burn_in = 400;          ///< steps before the returned state; the first adapt_steps tune the step size
  int adapt_steps = 200;
  int trace_interval = 10;    ///< record the energy every this many steps after adaptation
  double target_acceptance = 0.574;
  double initial_step = 0.0;  ///< 0 selects 1.5 N^{-1/3}
  McmcPreconditioner preconditioner = McmcPreconditioner::fourier;
  double stationarity_z = 4.0;

  void validate() const {
    if (burn_in < 1 || adapt_steps < 0 || adapt_steps >= burn_in || trace_interval < 1)
      throw InvalidArgument("McmcControls: need burn_in >= 1, 0 <= adapt_steps < burn_in, trace_interval >= 1");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
      throw InvalidArgument("McmcControls: target_acceptance must be in (0, 1)");
  }
};

struct McmcDiagnostics {
  double acceptance_rate = 1.0;
  double step = 0.0;
  int steps = 0;
  std::vector<double> energy_trace;
  double stationarity_z = 0.0;
  bool converged = true;
};

struct FieldSample {
  std::optional<RealField> phi;    ///< scalar field (massive case and d >= 2 massless proxy)
  std::optional<RealField> omega;  ///< gradient field, d components
  double mass = 0.0;
  McmcDiagnostics diagnostics;
};

namespace detail {

/// Geweke-style comparison of the first 20% and last 50% of a trace.
inline double geweke_z(const std::vector<double>& trace) {
  if (trace.size() < 10) return 0.0;
  const std::size_t n = trace.size();
  const std::vector<double> a(trace.begin(), trace.begin() + static_cast<long>(n / 5));
  const std::vector<double> b(trace.begin() + static_cast<long>(n / 2), trace.end());
  const auto ma = mean_stderr(a), mb = mean_stderr(b);
  const double se = std::hypot(ma.stderr, mb.stderr);
  return se > 0.0 ? (ma.mean - mb.mean) / se : 0.0;
}

class MalaSampler {
 public:
  MalaSampler(const TorusGrid& grid, const GradientPotential& V, double mass, const McmcControls& c)
      : grid_(grid), V_(V), m2_(mass * mass), controls_(c), precond_(grid.size(), 1.0) {
    if (c.preconditioner == McmcPreconditioner::fourier) {
      const auto cb = V.curvature_bounds();
      const double cbar = std::sqrt(cb.lambda * cb.Lambda);
      const auto e2 = shifted_symbol_norms(grid, {});
      for (std::size_t k = 0; k < grid.size(); ++k) precond_[k] = 1.0 / (cbar * e2[k] + m2_);
    }
  }

  double energy(const RealField& phi) const {
    double u = 0.0;
    const auto g = forward_gradient(phi);
    for (double v : g.data()) u += V_.value(v);
    for (double v : phi.data()) u += 0.5 * m2_ * v * v;
    return u;
  }

  RealField energy_gradient(const RealField& phi) const {
    auto g = forward_gradient(phi);
    for (double& v : g.data()) v = V_.derivative(v);
    auto out = adjoint_gradient(g);
    for (std::size_t x = 0; x < phi.sites(); ++x) out[x] += m2_ * phi[x];
    return out;
  }

  RealField apply_power(const RealField& f, double power) const {
    if (controls_.preconditioner == McmcPreconditioner::none) return f;
    return real_part(apply_fourier_multiplier(to_complex(f), [&](std::size_t k) { return std::pow(precond_[k], power); }));
  }

  double inverse_norm2(const RealField& f) const {
    if (controls_.preconditioner == McmcPreconditioner::none) return inner(f, f);
    const auto spec = dft(f);
    double s = 0.0;
    for (std::size_t k = 0; k < spec.sites(); ++k) s += std::norm(spec[k]) / precond_[k];
    return s / static_cast<double>(spec.sites());
  }

  RealField white_noise(CounterRng& rng) const {
    RealField xi(grid_, 1);
    for (double& v : xi.data()) v = rng.next_normal();
    return xi;
  }

  FieldSample run(CounterRng rng) const {
    const auto n = static_cast<double>(grid_.size());
    RealField phi = controls_.preconditioner == McmcPreconditioner::fourier ? apply_power(white_noise(rng), 0.5)
                                                                              : RealField(grid_, 1);
    double h = controls_.initial_step > 0.0 ? controls_.initial_step : 1.5 * std::pow(n, -1.0 / 3.0);
    double u = energy(phi);
    RealField grad = energy_gradient(phi);
    RealField drift = apply_power(grad, 1.0);

    FieldSample out;
    auto& diag = out.diagnostics;
    int accepted_after_adapt = 0;
    for (int step = 0; step < controls_.burn_in; ++step) {
      const auto noise = apply_power(white_noise(rng), 0.5);
      RealField y(grid_, 1);
      for (std::size_t x = 0; x < grid_.size(); ++x)
        y[x] = phi[x] - 0.5 * h * drift[x] + std::sqrt(h) * noise[x];
      const double uy = energy(y);
      const RealField grad_y = energy_gradient(y);
      const RealField drift_y = apply_power(grad_y, 1.0);
      RealField fwd(grid_, 1), bwd(grid_, 1);
      for (std::size_t x = 0; x < grid_.size(); ++x) {
        fwd[x] = y[x] - phi[x] + 0.5 * h * drift[x];
        bwd[x] = phi[x] - y[x] + 0.5 * h * drift_y[x];
      }
      const double log_alpha = -uy + u - (inverse_norm2(bwd) - inverse_norm2(fwd)) / (2.0 * h);
      const bool accept = std::log(rng.next_uniform()) < log_alpha;
      if (accept) {
        phi = std::move(y);
        u = uy;
        drift = drift_y;
      }
      if (step < controls_.adapt_steps) {
        const double rate = 1.0 / std::pow(step + 1.0, 0.6);
        h *= std::exp(rate * ((accept ? 1.0 : 0.0) - controls_.target_acceptance));
      } else {
        accepted_after_adapt += accept ? 1 : 0;
        if ((step - controls_.adapt_steps) % controls_.trace_interval == 0) diag.energy_trace.push_back(u);
      }
    }
    const int measured = controls_.burn_in - controls_.adapt_steps;
    diag.acceptance_rate = static_cast<double>(accepted_after_adapt) / measured;
    diag.step = h;
    diag.steps = controls_.burn_in;
    diag.stationarity_z = geweke_z(diag.energy_trace);
    diag.converged = std::abs(diag.stationarity_z) <= controls_.stationarity_z && diag.acceptance_rate > 0.05;
    out.phi = std::move(phi);
    out.mass = std::sqrt(m2_);
    return out;
  }

 private:
  TorusGrid grid_;
  GradientPotential V_;
  double m2_;
  McmcControls controls_;
  std::vector<double> precond_;
};

}  // namespace detail

/// One approximate sample of the finite-volume massive measure
/// exp[-sum_x {V(grad phi(x)) + m^2 phi(x)^2 / 2}] / Z by
/// Fourier-preconditioned MALA. Sample `index` is its own chain.
inline FieldSample sample_massive_field(const TorusGrid& grid, const GradientPotential& V, double mass,
                                        const McmcControls& controls, std::uint64_t seed, std::uint64_t index = 0) {
  if (!(mass > 0.0)) throw InvalidArgument("sample_massive_field: mass must be > 0");
  V.validate();
  controls.validate();
  return detail::MalaSampler(grid, V, mass, controls).run(sample_stream(seed, index, stream_tag::kMcmc));
}

/// Default proxy mass for the massless measure in d >= 2: m^2 = 10 / L^2.
inline double massless_proxy_mass(const TorusGrid& grid, double factor = 10.0) {
  return std::sqrt(factor) / grid.side();
}

/// Gradient field sample. In d = 1 the omega(x) are exactly i.i.d. with density
/// proportional to exp(-V(omega)) (rejection from a Gaussian envelope). In
/// d >= 2 this is the massive sampler at a small proxy mass, with omega = grad phi.
inline FieldSample sample_massless_gradient(const TorusGrid& grid, const GradientPotential& V,
                                            const McmcControls& controls, std::uint64_t seed,
                                            std::uint64_t index = 0, double proxy_mass = 0.0) {
  V.validate();
  if (grid.dim() == 1) {
    auto rng = sample_stream(seed, index, stream_tag::kMcmc);
    const double lmin = V.curvature_bounds().lambda;
    const double sd = 1.0 / std::sqrt(lmin);
    RealField omega(grid, 1);
    long proposals = 0;
    for (double& w : omega.data()) {
      for (;;) {
        ++proposals;
        const double s = sd * rng.next_normal();
        if (std::log(rng.next_uniform()) < -V.value(s) + 0.5 * lmin * s * s) {
          w = s;
          break;
        }
      }
    }
    FieldSample out;
    out.omega = std::move(omega);
    out.diagnostics.acceptance_rate = static_cast<double>(grid.size()) / static_cast<double>(proposals);
    return out;
  }
  const double m = proxy_mass > 0.0 ? proxy_mass : massless_proxy_mass(grid);
  auto out = sample_massive_field(grid, V, m, controls, seed, index);
  out.omega = forward_gradient(*out.phi);
  return out;
}

/// m-halving diagnostic for the d >= 2 massless proxy: the observable is the
/// spatial mean of omega_1(x)^2.
struct MassHalvingReport {
  double mass = 0.0;
  MeanStderr at_mass;
  MeanStderr at_half_mass;
  double drift = 0.0;
  double combined_stderr = 0.0;
  bool within(double tolerance) const { return drift <= std::max(tolerance, 3.0 * combined_stderr); }
};

inline MassHalvingReport massless_mass_halving(const TorusGrid& grid, const GradientPotential& V,
                                               const McmcControls& controls, std::uint64_t seed, int n_samples,
                                               int threads = 1, double mass = 0.0) {
  if (grid.dim() < 2) throw InvalidArgument("massless_mass_halving: only meaningful for d >= 2");
  const double m = mass > 0.0 ? mass : massless_proxy_mass(grid);
  auto observe = [&](double mm, std::uint64_t tag) {
    std::vector<double> obs(static_cast<std::size_t>(n_samples));
    parallel_for(obs.size(), threads, [&](std::size_t i) {
      const auto s = sample_massless_gradient(grid, V, controls, seed ^ tag, i, mm);
      double acc = 0.0;
      for (double w : s.omega->component(0)) acc += w * w;
      obs[i] = acc / static_cast<double>(grid.size());
    });
    return mean_stderr(obs);
  };
  MassHalvingReport r;
  r.mass = m;
  r.at_mass = observe(m, 0);
  r.at_half_mass = observe(0.5 * m, 0x5bd1e995);
  r.drift = std::abs(r.at_mass.mean - r.at_half_mass.mean);
  r.combined_stderr = std::hypot(r.at_mass.stderr, r.at_half_mass.stderr);
  return r;
}

// ---------------------------------------------------------------------------
// Coefficient maps

/// a~ : R -> symmetric matrices, with declared bounds and ||D a~||_inf <= derivative_bound.
struct PhiCoefficientMap {
  std::function<Eigen::MatrixXd(double)> fn;
  EllipticityBounds bounds;
  double derivative_bound = 0.0;
  std::string name;

  /// (c0 + c1 tanh s) I.
  static PhiCoefficientMap tanh_scalar(int d, double c0, double c1) {
    if (!(c0 - std::abs(c1) > 0.0)) throw InvalidArgument("tanh_scalar: need c0 > |c1|");
    return {[d, c0, c1](double s) { return Eigen::MatrixXd((c0 + c1 * std::tanh(s)) * Eigen::MatrixXd::Identity(d, d)); },
            {c0 - std::abs(c1), c0 + std::abs(c1)},
            std::abs(c1),
            "tanh_scalar"};
  }
  static PhiCoefficientMap constant(int d, double c) {
    return {[d, c](double) { return Eigen::MatrixXd(c * Eigen::MatrixXd::Identity(d, d)); }, {c, c}, 0.0, "constant"};
  }
};

/// a~ : R^d -> symmetric matrices.
struct GradientCoefficientMap {
  std::function<Eigen::MatrixXd(std::span<const double>)> fn;
  EllipticityBounds bounds;
  double derivative_bound = 0.0;
  std::string name;

  /// diag_i(c0 + c1 tanh w_i).
  static GradientCoefficientMap diag_tanh(int d, double c0, double c1) {
    if (!(c0 - std::abs(c1) > 0.0)) throw InvalidArgument("diag_tanh: need c0 > |c1|");
    return {[d, c0, c1](std::span<const double> w) {
              Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
              for (int i = 0; i < d; ++i) m(i, i) = c0 + c1 * std::tanh(w[static_cast<std::size_t>(i)]);
              return m;
            },
            {c0 - std::abs(c1), c0 + std::abs(c1)},
            std::abs(c1),
            "diag_tanh"};
  }
  static GradientCoefficientMap constant(int d, double c) {
    return {[d, c](std::span<const double>) { return Eigen::MatrixXd(c * Eigen::MatrixXd::Identity(d, d)); },
            {c, c},
            0.0,
            "constant"};
  }
};

/// a(x) = a~(phi(x)).
inline CoefficientField coeff_from_phi(const FieldSample& sample, const PhiCoefficientMap& map,
                                       const EllipticityBounds& bounds) {
  if (!sample.phi) throw InvalidArgument("coeff_from_phi: sample carries no phi");
  const auto& phi = *sample.phi;
  CoefficientField f{make_matrix_field(phi.grid()), bounds, "massive_field"};
  for (std::size_t x = 0; x < phi.sites(); ++x) f.set(x, map.fn(phi[x]));
  f.validate(1e-12);
  return f;
}

/// a(x) = a~(omega(x)).
inline CoefficientField coeff_from_gradient(const FieldSample& sample, const GradientCoefficientMap& map,
                                            const EllipticityBounds& bounds) {
  if (!sample.omega) throw InvalidArgument("coeff_from_gradient: sample carries no omega");
  const auto& om = *sample.omega;
  const int d = om.grid().dim();
  if (om.components() != d) throw InvalidArgument("coeff_from_gradient: omega must have d components");
  CoefficientField f{make_matrix_field(om.grid()), bounds, "massless_gradient"};
  std::vector<double> w(static_cast<std::size_t>(d));
  for (std::size_t x = 0; x < om.sites(); ++x) {
    for (int i = 0; i < d; ++i) w[static_cast<std::size_t>(i)] = om(i, x);
    f.set(x, map.fn(w));
  }
  f.validate(1e-12);
  return f;
}

// ---------------------------------------------------------------------------
// i.i.d. environments

/// Law of a single site matrix: a finite mixture of atoms, or s I with s uniform on [lo, hi].
struct MatrixDistribution {
  struct Atom {
    double weight = 0.0;
    Eigen::MatrixXd matrix;
  };
  int dim = 1;
  std::vector<Atom> atoms;
  std::optional<std::pair<double, double>> uniform_scalar;

  static MatrixDistribution point_mass(const Eigen::MatrixXd& m) {
    return {static_cast<int>(m.rows()), {{1.0, m}}, std::nullopt};
  }
  static MatrixDistribution mixture(int d, std::vector<Atom> atoms) { return {d, std::move(atoms), std::nullopt}; }
  static MatrixDistribution uniform(int d, double lo, double hi) { return {d, {}, std::make_pair(lo, hi)}; }

  /// Tightest bounds containing the support.
  EllipticityBounds support_bounds() const {
    if (uniform_scalar) return {uniform_scalar->first, uniform_scalar->second};
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& a : atoms) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.matrix, Eigen::EigenvaluesOnly);
      lo = std::min(lo, es.eigenvalues().minCoeff());
      hi = std::max(hi, es.eigenvalues().maxCoeff());
    }
    return {lo, hi};
  }

  void validate() const {
    if (uniform_scalar) {
      if (!(uniform_scalar->first > 0.0 && uniform_scalar->second >= uniform_scalar->first))
        throw InvalidArgument("MatrixDistribution: uniform law needs 0 < lo <= hi");
      return;
    }
    if (atoms.empty()) throw InvalidArgument("MatrixDistribution: no atoms");
    double total = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const auto& a = atoms[i];
      if (!(a.weight > 0.0)) throw InvalidArgument("MatrixDistribution: atom weights must be > 0");
      if (a.matrix.rows() != dim || a.matrix.cols() != dim)
        throw InvalidArgument("MatrixDistribution: atom " + std::to_string(i) + " has wrong shape");
      if ((a.matrix - a.matrix.transpose()).cwiseAbs().maxCoeff() > 1e-14)
        throw InvalidArgument("MatrixDistribution: atom " + std::to_string(i) + " is not symmetric");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.matrix, Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > 0.0))
        throw InvalidArgument("MatrixDistribution: atom " + std::to_string(i) +
                              " violates uniform ellipticity (lambda I <= a with lambda > 0)");
      total += a.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("MatrixDistribution: weights must sum to 1");
  }
};

/// Each site independently (1 + gamma) I or (1 - gamma) I with probability 1/2.
inline CoefficientField sample_bernoulli(const TorusGrid& grid, double gamma, std::uint64_t seed,
                                         std::uint64_t index = 0) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw InvalidArgument("sample_bernoulli: gamma must satisfy 0 <= gamma < 1 (ellipticity lambda = 1 - gamma > 0), got " +
                          std::to_string(gamma));
  const auto rng = sample_stream(seed, index, stream_tag::kCoefficients);
  const int d = grid.dim();
  CoefficientField f{make_matrix_field(grid), {1.0 - gamma, 1.0 + gamma}, "bernoulli", seed, index};
  for (std::size_t x = 0; x < grid.size(); ++x) {
    const double v = rng.uniform(x) < 0.5 ? 1.0 + gamma : 1.0 - gamma;
    for (int i = 0; i < d; ++i) f.a(i * d + i, x) = v;
  }
  return f;
}

inline CoefficientField sample_iid_general(const TorusGrid& grid, const MatrixDistribution& dist, std::uint64_t seed,
                                           std::uint64_t index = 0) {
  dist.validate();
  if (dist.dim != grid.dim()) throw InvalidArgument("sample_iid_general: distribution dimension != grid dimension");
  const auto rng = sample_stream(seed, index, stream_tag::kCoefficients);
  const int d = grid.dim();
  CoefficientField f{make_matrix_field(grid), dist.support_bounds(), "iid_general", seed, index};
  std::vector<double> cdf;
  for (const auto& a : dist.atoms) cdf.push_back((cdf.empty() ? 0.0 : cdf.back()) + a.weight);
  for (std::size_t x = 0; x < grid.size(); ++x) {
    const double u = rng.uniform(x);
    if (dist.uniform_scalar) {
      const auto [lo, hi] = *dist.uniform_scalar;
      const double v = lo + (hi - lo) * u;
      for (int i = 0; i < d; ++i) f.a(i * d + i, x) = v;
    } else {
      std::size_t k = 0;
      while (k + 1 < cdf.size() && u >= cdf[k]) ++k;
      f.set(x, dist.atoms[k].matrix);
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Environment specifications

struct BernoulliEnv {
  double gamma = 0.0;
};
struct IidGeneralEnv {
  MatrixDistribution distribution;
};
struct MassiveFieldEnv {
  GradientPotential V;
  double mass = 1.0;
  McmcControls mcmc;
  PhiCoefficientMap a_tilde;
};
struct MasslessGradientEnv {
  GradientPotential V;
  McmcControls mcmc;
  GradientCoefficientMap a_tilde;
  double proxy_mass = 0.0;  ///< d >= 2 only; 0 selects sqrt(10) / L
};

struct EnvironmentSpec {
  std::variant<BernoulliEnv, IidGeneralEnv, MassiveFieldEnv, MasslessGradientEnv> params;

  std::string kind() const {
    static constexpr const char* names[] = {"bernoulli", "iid_general", "massive_field", "massless_gradient"};
    return names[params.index()];
  }

  EllipticityBounds bounds() const {
    return std::visit(
        [](const auto& p) -> EllipticityBounds {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, BernoulliEnv>) return {1.0 - p.gamma, 1.0 + p.gamma};
          else if constexpr (std::is_same_v<P, IidGeneralEnv>) return p.distribution.support_bounds();
          else return p.a_tilde.bounds;
        },
        params);
  }

  /// True if every realization is the same constant matrix.
  bool is_deterministic() const {
    if (const auto* b = std::get_if<BernoulliEnv>(&params)) return b->gamma == 0.0;
    if (const auto* i = std::get_if<IidGeneralEnv>(&params))
      return !i->distribution.uniform_scalar && i->distribution.atoms.size() == 1;
    return false;
  }

  void validate() const {
    std::visit(
        [](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, BernoulliEnv>) {
            if (!(p.gamma >= 0.0 && p.gamma < 1.0))
              throw InvalidArgument("bernoulli: gamma must satisfy 0 <= gamma < 1 (ellipticity lambda = 1 - gamma > 0)");
          } else if constexpr (std::is_same_v<P, IidGeneralEnv>) {
            p.distribution.validate();
          } else {
            p.V.validate();
            p.mcmc.validate();
            p.a_tilde.bounds.validate();
            if (!p.a_tilde.fn) throw InvalidArgument("field environment: coefficient map missing");
            if constexpr (std::is_same_v<P, MassiveFieldEnv>)
              if (!(p.mass > 0.0)) throw InvalidArgument("massive_field: mass must be > 0");
          }
        },
        params);
  }

  /// Exact E[a(0)] for the i.i.d. laws; field environments have no closed form.
  std::optional<Eigen::MatrixXd> mean_coefficient(int d) const {
    if (std::holds_alternative<BernoulliEnv>(params)) return Eigen::MatrixXd::Identity(d, d);
    if (const auto* i = std::get_if<IidGeneralEnv>(&params)) {
      const auto& D = i->distribution;
      if (D.uniform_scalar) return 0.5 * (D.uniform_scalar->first + D.uniform_scalar->second) * Eigen::MatrixXd::Identity(d, d);
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
      for (const auto& a : D.atoms) m += a.weight * a.matrix;
      return m;
    }
    return std::nullopt;
  }

  /// C(i*d+j, k*d+l) = Cov[a_ij(0), a_kl(0)] for the i.i.d. laws.
  std::optional<Eigen::MatrixXd> coefficient_covariance(int d) const {
    const auto mean = mean_coefficient(d);
    if (!mean) return std::nullopt;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d * d, d * d);
    const auto add = [&](double w, const Eigen::MatrixXd& a) {
      const Eigen::MatrixXd b = a - *mean;
      const Eigen::Map<const Eigen::VectorXd> v(b.data(), d * d);  // symmetric, so layout order is immaterial
      C += w * v * v.transpose();
    };
    if (const auto* b = std::get_if<BernoulliEnv>(&params)) {
      add(0.5, (1.0 + b->gamma) * Eigen::MatrixXd::Identity(d, d));
      add(0.5, (1.0 - b->gamma) * Eigen::MatrixXd::Identity(d, d));
    } else if (const auto* i = std::get_if<IidGeneralEnv>(&params)) {
      const auto& D = i->distribution;
      if (D.uniform_scalar) {
        const double w = D.uniform_scalar->second - D.uniform_scalar->first;
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
        const Eigen::Map<const Eigen::VectorXd> v(I.data(), d * d);
        C = (w * w / 12.0) * v * v.transpose();
      } else {
        for (const auto& a : D.atoms) add(a.weight, a.matrix);
      }
    }
    return C;
  }

  static EnvironmentSpec bernoulli(double gamma) { return {BernoulliEnv{gamma}}; }
  static EnvironmentSpec constant(int d, double c) {
    return {IidGeneralEnv{MatrixDistribution::point_mass(c * Eigen::MatrixXd::Identity(d, d))}};
  }
};

struct EnvironmentSample {
  CoefficientField field;
  std::optional<McmcDiagnostics> diagnostics;  ///< field environments only
};

/// Coefficient field for Monte Carlo sample `index` of `spec`, with the
/// sampler diagnostics of field environments.
inline EnvironmentSample sample_environment(const EnvironmentSpec& spec, const TorusGrid& grid, std::uint64_t seed,
                                            std::uint64_t index) {
  EnvironmentSample out = std::visit(
      [&](const auto& p) -> EnvironmentSample {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, BernoulliEnv>) {
          return {sample_bernoulli(grid, p.gamma, seed, index), std::nullopt};
        } else if constexpr (std::is_same_v<P, IidGeneralEnv>) {
          return {sample_iid_general(grid, p.distribution, seed, index), std::nullopt};
        } else if constexpr (std::is_same_v<P, MassiveFieldEnv>) {
          auto s = sample_massive_field(grid, p.V, p.mass, p.mcmc, seed, index);
          return {coeff_from_phi(s, p.a_tilde, p.a_tilde.bounds), std::move(s.diagnostics)};
        } else {
          auto s = sample_massless_gradient(grid, p.V, p.mcmc, seed, index, p.proxy_mass);
          return {coeff_from_gradient(s, p.a_tilde, p.a_tilde.bounds), std::move(s.diagnostics)};
        }
      },
      spec.params);
  out.field.seed = seed;
  out.field.sample_index = index;
  return out;
}

/// Coefficient field for Monte Carlo sample `index` of `spec`.
inline CoefficientField sample_coefficients(const EnvironmentSpec& spec, const TorusGrid& grid, std::uint64_t seed,
                                            std::uint64_t index) {
  return sample_environment(spec, grid, seed, index).field;
}

}  // namespace hlab
