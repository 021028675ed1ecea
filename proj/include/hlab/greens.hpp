#pragma once

// Averaged and homogenized Green's functions, their difference tables, the
// smooth cutoff chi_L, and decay-exponent fits.

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <nlohmann/json.hpp>

#include "hlab/effective.hpp"
#include "hlab/io.hpp"
#include "hlab/solver.hpp"

namespace hlab {

enum class GreensKind { averaged, homogenized, difference, gradient_difference, second_difference, smoothed, remainder };

inline const char* to_string(GreensKind k) {
  switch (k) {
    case GreensKind::averaged: return "averaged";
    case GreensKind::homogenized: return "homogenized";
    case GreensKind::difference: return "difference";
    case GreensKind::gradient_difference: return "gradient_difference";
    case GreensKind::second_difference: return "second_difference";
    case GreensKind::smoothed: return "smoothed";
    case GreensKind::remainder: return "remainder";
  }
  return "?";
}

struct GreensTable {
  GreensKind kind = GreensKind::averaged;
  double eta = 0.0;
  RealField values;
  RealField stderr;  ///< same shape as values; zero for deterministic tables
  int n_samples = 0;
  int failed_samples = 0;
  std::vector<RealField> per_sample;  ///< per-sample estimates behind an averaged table
  std::optional<double> doubling_drift;  ///< homogenized: max |G_L - G_2L| on |x|_inf <= L/4

  GreensTable(GreensKind k, double e, RealField v)
      : kind(k), eta(e), values(std::move(v)), stderr(values.grid(), values.components()) {}

  const TorusGrid& grid() const { return values.grid(); }
  int components() const { return values.components(); }

  /// Euclidean norm over components at site x.
  double magnitude(std::size_t x) const {
    double s = 0.0;
    for (int c = 0; c < components(); ++c) s += values(c, x) * values(c, x);
    return std::sqrt(s);
  }
  double magnitude_stderr(std::size_t x) const {
    double s = 0.0;
    for (int c = 0; c < components(); ++c) s += stderr(c, x) * stderr(c, x);
    return std::sqrt(s);
  }
};

namespace detail {

/// Mean and standard error of per-sample fields, component by component.
inline void mean_and_stderr(const std::vector<RealField>& fields, RealField& mean_out, RealField& se_out) {
  const auto n = static_cast<double>(fields.size());
  mean_out = RealField(fields.front().grid(), fields.front().components());
  se_out = RealField(mean_out.grid(), mean_out.components());
  for (const auto& f : fields) mean_out += f;
  mean_out *= 1.0 / n;
  if (fields.size() < 2) return;
  for (const auto& f : fields)
    for (std::size_t i = 0; i < f.data().size(); ++i) {
      const double dv = f.data()[i] - mean_out.data()[i];
      se_out.data()[i] += dv * dv;
    }
  for (auto& v : se_out.data()) v = std::sqrt(v / ((n - 1.0) * n));
}

inline RealField second_differences(const RealField& f) {
  const auto& g = f.grid();
  const int d = g.dim();
  const auto grad = forward_gradient(f);
  RealField out(g, d * d);
  for (int j = 0; j < d; ++j) {
    RealField gj(g, 1);
    std::copy(grad.component(j).begin(), grad.component(j).end(), gj.component(0).begin());
    const auto gg = forward_gradient(gj);
    for (int i = 0; i < d; ++i)
      std::copy(gg.component(i).begin(), gg.component(i).end(), out.component(i * d + j).begin());
  }
  return out;
}

}  // namespace detail

/// Source sites for sample i: the origin followed by uniformly random sites.
inline std::vector<std::size_t> green_sources(const TorusGrid& grid, std::uint64_t seed, std::uint64_t index, int count) {
  std::vector<std::size_t> src{0};
  auto rng = sample_stream(seed, index, stream_tag::kSources);
  while (static_cast<int>(src.size()) < count) src.push_back(static_cast<std::size_t>(rng.next_u64() % grid.size()));
  return src;
}

/// Point-source estimator settings.
///
/// With `control_mean` set to the exact ensemble mean c0 of a(x), each source
/// solve u_y is corrected by the first-order perturbation term
/// G_0 grad^* (a - c0) grad G_0 delta_y, G_0 = (eta + grad^* c0 grad)^{-1},
/// whose expectation vanishes. If the law is i.i.d. across sites and
/// `control_covariance` holds C(i*d+j, k*d+l) = E[(a-c0)_ij (a-c0)_kl], the
/// second-order term is subtracted as well, centred by its exact mean.
struct GreenEstimator {
  int sources_per_sample = 16;
  std::optional<Eigen::MatrixXd> control_mean;
  std::optional<Eigen::MatrixXd> control_covariance;
};

namespace detail {
/// Symbol of E[G_0 grad^* B grad G_0 grad^* B grad G_0] for site-i.i.d. B with covariance C.
inline std::vector<cplx> second_order_mean_symbol(const TorusGrid& g, const std::vector<cplx>& e,
                                                  const std::vector<double>& g0_hat, const Eigen::MatrixXd& C) {
  const int d = g.dim();
  const auto D = static_cast<std::size_t>(d);
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(d, d);  // diagonal kernel of grad G_0 grad^*
  for (std::size_t k = 0; k < g.size(); ++k)
    for (std::size_t j = 0; j < D; ++j)
      for (std::size_t l = 0; l < D; ++l) m(j, l) += e[k * D + j] * std::conj(e[k * D + l]) * g0_hat[k];
  m /= static_cast<double>(g.size());
  Eigen::MatrixXcd W = Eigen::MatrixXcd::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) W(i, l) += C(i * d + j, k * d + l) * m(j, k);
  std::vector<cplx> out(g.size());
  Eigen::VectorXcd v(d);
  for (std::size_t k = 0; k < g.size(); ++k) {
    for (std::size_t j = 0; j < D; ++j) v(static_cast<Eigen::Index>(j)) = e[k * D + j];
    out[k] = (v.adjoint() * W * v)(0, 0) * g0_hat[k] * g0_hat[k];
  }
  return out;
}
}  // namespace detail

/// Green's function of one coefficient field averaged over source positions:
/// G_i(x) = S^{-1} sum_y u_y(x + y), (eta + grad^* a grad) u_y = delta_y.
inline RealField sample_green(const CoefficientField& a, double eta, std::span<const std::size_t> sources,
                              const SolveControls& controls, const std::optional<Eigen::MatrixXd>& control_mean = {},
                              const std::optional<Eigen::MatrixXd>& control_covariance = {}) {
  const auto& g = a.grid();
  const int d = g.dim();
  RealField acc(g, 1);
  std::vector<double> g0_hat;
  RealField grad_g0(g, d);
  RealField second_mean(g, 1);
  CoefficientField B = a;
  if (control_covariance && !control_mean) throw InvalidArgument("sample_green: control_covariance needs control_mean");
  if (control_mean) {
    if (control_mean->rows() != d || control_mean->cols() != d) throw InvalidArgument("sample_green: control_mean shape");
    const auto e = shifted_symbols(g, {});
    g0_hat.resize(g.size());
    Eigen::VectorXcd v(d);
    ComplexField spec(g, 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
      for (int j = 0; j < d; ++j) v(j) = e[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
      g0_hat[k] = 1.0 / (eta + (v.adjoint() * control_mean->cast<cplx>() * v)(0, 0).real());
      spec[k] = g0_hat[k];
    }
    grad_g0 = forward_gradient(real_part(idft(std::move(spec))));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (auto& x : B.a.component(i * d + j)) x -= (*control_mean)(i, j);
    if (control_covariance) {
      if (control_covariance->rows() != d * d || control_covariance->cols() != d * d)
        throw InvalidArgument("sample_green: control_covariance shape");
      const auto sym = detail::second_order_mean_symbol(g, e, g0_hat, *control_covariance);
      ComplexField s2(g, 1);
      for (std::size_t k = 0; k < g.size(); ++k) s2[k] = sym[k];
      second_mean = real_part(idft(std::move(s2)));
    }
  }
  const auto apply_g0 = [&](const RealField& f) {
    return real_part(apply_fourier_multiplier(to_complex(f), [&](std::size_t k) { return cplx(g0_hat[k]); }));
  };
  for (std::size_t y : sources) {
    RealField h(g, 1);
    h[y] = 1.0;
    const auto sol = solve_elliptic(a, eta, h, controls);
    acc += translate(sol.u, y);
    if (control_mean) {
      CoefficientField By{translate(B.a, y), B.bounds, B.kind};
      const auto c1 = apply_g0(adjoint_gradient(apply_coefficient(By, grad_g0)));
      acc += c1;
      if (control_covariance) {
        acc -= apply_g0(adjoint_gradient(apply_coefficient(By, forward_gradient(c1))));
        acc += second_mean;
      }
    }
  }
  acc *= 1.0 / static_cast<double>(sources.size());
  return acc;
}

/// Monte Carlo estimate of the averaged Green's function over a fixed ensemble.
/// Samples whose solve fails are dropped and counted.
inline GreensTable averaged_green(std::span<const CoefficientField> ensemble, double eta, const SolveControls& controls,
                                  const GreenEstimator& est, std::uint64_t seed, int threads = 1) {
  check_eta(eta, "averaged_green");
  if (ensemble.empty()) throw InvalidArgument("averaged_green: n_samples must be >= 1");
  if (est.sources_per_sample < 1) throw InvalidArgument("averaged_green: sources_per_sample must be >= 1");
  const auto& grid = ensemble.front().grid();
  std::vector<std::optional<RealField>> slots(ensemble.size());
  parallel_for(ensemble.size(), threads, [&](std::size_t i) {
    const auto src = green_sources(grid, seed, ensemble[i].sample_index, est.sources_per_sample);
    try {
      slots[i] = sample_green(ensemble[i], eta, src, controls, est.control_mean, est.control_covariance);
    } catch (const ConvergenceError&) {
      slots[i].reset();
    }
  });
  GreensTable t(GreensKind::averaged, eta, RealField(grid, 1));
  for (auto& s : slots) {
    if (s) t.per_sample.push_back(std::move(*s));
    else ++t.failed_samples;
  }
  if (t.per_sample.empty()) throw ConvergenceError("averaged_green: every sample failed", 0.0, 0);
  t.n_samples = static_cast<int>(t.per_sample.size());
  detail::mean_and_stderr(t.per_sample, t.values, t.stderr);
  return t;
}

inline GreensTable averaged_green(const EnvironmentSpec& env, const TorusGrid& grid, double eta, int n_samples,
                                  const SolveControls& controls, const GreenEstimator& est, std::uint64_t seed,
                                  int threads = 1) {
  const auto ens = sample_ensemble(env, grid, n_samples, seed, threads);
  return averaged_green(ens, eta, controls, est, seed, threads);
}

namespace detail {
inline RealField homogenized_kernel(const Eigen::MatrixXcd& q, double eta, const TorusGrid& grid) {
  const auto e = shifted_symbols(grid, {});
  const int d = grid.dim();
  ComplexField spec(grid, 1);
  Eigen::VectorXcd v(d);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (int j = 0; j < d; ++j) v(j) = e[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
    spec[k] = 1.0 / (eta + (v.adjoint() * q * v)(0, 0).real());
  }
  return real_part(idft(std::move(spec)));
}
}  // namespace detail

/// (2 pi)^{-d} int e^{-i xi.x} / [eta + e(xi)^* q e(xi)] d xi as a dual-lattice sum,
/// with the drift against the 2L torus on the box |x|_inf <= L/4.
inline GreensTable homogenized_green(const Eigen::MatrixXcd& q00, double eta, const TorusGrid& grid) {
  check_eta(eta, "homogenized_green");
  if (q00.rows() != grid.dim() || q00.cols() != grid.dim()) throw InvalidArgument("homogenized_green: q00 shape mismatch");
  const double n = spectral_norm(q00);
  if (!(n > 0.0) || spectral_norm(q00 - q00.adjoint()) > 1e-10 * n)
    throw NotPositiveDefinite("homogenized_green: q00 is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(0.5 * (q00 + q00.adjoint()));
  if (!(es.eigenvalues().minCoeff() > 0.0)) throw NotPositiveDefinite("homogenized_green: q00 is not positive definite");
  const Eigen::MatrixXcd q = 0.5 * (q00 + q00.adjoint());

  GreensTable t(GreensKind::homogenized, eta, detail::homogenized_kernel(q, eta, grid));
  const TorusGrid big(grid.dim(), 2 * grid.side());
  const auto g2 = detail::homogenized_kernel(q, eta, big);
  double drift = 0.0;
  for (std::size_t x = 0; x < grid.size(); ++x) {
    const auto c = grid.centered(x);
    bool inside = true;
    for (int v : c) inside = inside && std::abs(v) <= grid.side() / 4;
    if (inside) drift = std::max(drift, std::abs(t.values[x] - g2[big.index(c)]));
  }
  t.doubling_drift = drift;
  return t;
}

inline GreensTable homogenized_green(const EffectiveSymbol& q00, double eta, const TorusGrid& grid) {
  return homogenized_green(q00.q, eta, grid);
}

struct DifferenceTables {
  GreensTable value;     ///< G_avg - G_hom
  GreensTable gradient;  ///< grad_i (G_avg - G_hom), d components
  GreensTable second;    ///< grad_i grad_j (G_avg - G_hom), component i*d + j
};

/// Signed difference tables; standard errors come from the averaged table's samples.
inline DifferenceTables difference_tables(const GreensTable& avg, const GreensTable& hom) {
  if (!(avg.grid() == hom.grid())) throw InvalidArgument("difference_tables: grid mismatch");
  if (avg.eta != hom.eta) throw InvalidArgument("difference_tables: eta mismatch");
  if (avg.components() != 1 || hom.components() != 1) throw InvalidArgument("difference_tables: expected scalar tables");
  const RealField diff = avg.values - hom.values;
  DifferenceTables out{GreensTable(GreensKind::difference, avg.eta, diff),
                       GreensTable(GreensKind::gradient_difference, avg.eta, forward_gradient(diff)),
                       GreensTable(GreensKind::second_difference, avg.eta, detail::second_differences(diff))};
  for (auto* t : {&out.value, &out.gradient, &out.second}) {
    t->n_samples = avg.n_samples;
    t->failed_samples = avg.failed_samples;
  }
  out.value.stderr = avg.stderr;
  if (avg.per_sample.size() > 1) {
    std::vector<RealField> grads, seconds;
    for (const auto& s : avg.per_sample) {
      grads.push_back(forward_gradient(s));
      seconds.push_back(detail::second_differences(s));
    }
    RealField m(avg.grid(), 1);
    detail::mean_and_stderr(grads, m, out.gradient.stderr);
    detail::mean_and_stderr(seconds, m, out.second.stderr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cutoff chi_L

/// chi(y) proportional to exp(-1 / (1 - |y|^2)) on |y| < 1 with unit integral; chi_L(x) = L^{-d} chi(x / L).
struct CutoffSpec {
  double scale = 4.0;
};

struct CutoffKernel {
  RealField kernel;              ///< lattice samples renormalized to unit sum
  double mass_defect = 0.0;      ///< |sum_x chi_L(x) - 1| before renormalization
  double spectral_constant = 0.0;  ///< max over the dual lattice of |chi_L^(zeta)| (1 + L |zeta|)^2
};

/// int_{R^d} exp(-1 / (1 - |y|^2)) dy over the unit ball.
inline double bump_integral(int d) {
  auto radial = [d](double r) {
    if (r >= 1.0) return 0.0;
    return std::pow(r, d - 1) * std::exp(-1.0 / (1.0 - r * r));
  };
  const double sphere = 2.0 * std::pow(std::numbers::pi, 0.5 * d) / boost::math::tgamma(0.5 * d);
  return sphere * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(radial, 0.0, 1.0, 15, 1e-14);
}

inline CutoffKernel cutoff_kernel(const TorusGrid& grid, const CutoffSpec& spec) {
  if (!(spec.scale >= 1.0)) throw InvalidArgument("cutoff: scale must be >= 1");
  if (spec.scale > grid.side() / 4.0)
    throw InvalidArgument("cutoff: scale " + std::to_string(spec.scale) + " exceeds L/4 = " +
                          std::to_string(grid.side() / 4.0));
  const int d = grid.dim();
  const double norm = 1.0 / (bump_integral(d) * std::pow(spec.scale, d));
  CutoffKernel k{RealField(grid, 1)};
  double sum = 0.0;
  for (std::size_t x = 0; x < grid.size(); ++x) {
    double r2 = 0.0;
    for (int c : grid.centered(x)) r2 += static_cast<double>(c) * c;
    r2 /= spec.scale * spec.scale;
    const double v = r2 < 1.0 ? norm * std::exp(-1.0 / (1.0 - r2)) : 0.0;
    k.kernel[x] = v;
    sum += v;
  }
  k.mass_defect = std::abs(sum - 1.0);
  k.kernel *= 1.0 / sum;
  const auto spec_k = dft(k.kernel);
  for (std::size_t z = 0; z < grid.size(); ++z) {
    double zn = 0.0;
    for (double v : dual_point(grid, z)) zn += v * v;
    const double w = 1.0 + spec.scale * std::sqrt(zn);
    k.spectral_constant = std::max(k.spectral_constant, std::abs(spec_k[z]) * w * w);
  }
  return k;
}

struct SmoothedSplit {
  GreensTable smoothed;   ///< chi_L * G
  GreensTable remainder;  ///< G - chi_L * G, rounded
  RealField remainder_low;  ///< rounding error of the remainder: smoothed + remainder + remainder_low == G exactly
  CutoffKernel kernel;
  std::size_t inexact_sites = 0;  ///< sites where the exact sum check fails (expected 0)
};

namespace detail {

/// s + a + b == c in exact arithmetic, for finite doubles.
inline bool exact_sum_is(double s, double a, double b, double c) {
  using big = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<2200>>;
  return big(s) + big(a) + big(b) == big(c);
}

}  // namespace detail

/// Circular convolution with chi_L and the high-frequency remainder. When the
/// smoothed value is much larger than G no pair of doubles sums to G, so the
/// remainder carries a second, low-order table (an error-free two-sum).
inline SmoothedSplit cutoff_smooth(const GreensTable& table, const CutoffSpec& spec) {
  auto k = cutoff_kernel(table.grid(), spec);
  const auto kh = dft(k.kernel);
  const RealField smooth = real_part(apply_fourier_multiplier(to_complex(table.values), [&](std::size_t z) { return kh[z]; }));
  RealField rem(table.grid(), table.components()), low(table.grid(), table.components());
  std::size_t inexact = 0;
  for (std::size_t i = 0; i < smooth.data().size(); ++i) {
    const double g = table.values.data()[i];
    const double s = -smooth.data()[i];
    const double r = g + s;
    const double gv = r - s;
    const double sv = r - gv;
    const double lo = (g - gv) + (s - sv);
    rem.data()[i] = r;
    low.data()[i] = lo;
    if (!detail::exact_sum_is(smooth.data()[i], r, lo, g)) ++inexact;
  }
  SmoothedSplit out{GreensTable(GreensKind::smoothed, table.eta, smooth),
                    GreensTable(GreensKind::remainder, table.eta, std::move(rem)), std::move(low), std::move(k), inexact};
  out.smoothed.n_samples = out.remainder.n_samples = table.n_samples;
  return out;
}

// ---------------------------------------------------------------------------
// Decay fits

enum class DecayClaim { J1, K1, M1, A3, B3 };

inline const char* to_string(DecayClaim c) {
  switch (c) {
    case DecayClaim::J1: return "J1";
    case DecayClaim::K1: return "K1";
    case DecayClaim::M1: return "M1";
    case DecayClaim::A3: return "A3";
    case DecayClaim::B3: return "B3";
  }
  return "?";
}

/// Power d - 2, d - 1 or d of the claimed bound, before the extra alpha.
inline int claim_base_exponent(DecayClaim c, int d) {
  switch (c) {
    case DecayClaim::J1:
    case DecayClaim::A3: return d - 2;
    case DecayClaim::K1:
    case DecayClaim::B3: return d - 1;
    case DecayClaim::M1: return d;
  }
  return d;
}

struct DecayFitOptions {
  double r_min = 1.0;
  double r_max = 0.0;       ///< 0 selects L/4
  double noise_sigmas = 3.0;
  int bootstrap = 400;
  double Lambda = 1.0;
  std::uint64_t seed = 0;
};

struct DecayFitReport {
  struct PerEta {
    double eta = 0.0;
    double log_c = 0.0;
    double rate = 0.0;  ///< kappa_eta, fitted exponential rate at this eta
    double rate_ci_low = 0.0, rate_ci_high = 0.0;
    int points = 0;
    int below_noise = 0;
  };
  DecayClaim claim = DecayClaim::J1;
  int dim = 0;
  int side = 0;
  double claimed_base = 0.0;
  double p_hat = 0.0, p_ci_low = 0.0, p_ci_high = 0.0, p_stderr = 0.0;
  double alpha_hat = 0.0, alpha_ci_low = 0.0, alpha_ci_high = 0.0;
  double gamma_hat = 0.0, gamma_ci_low = 0.0, gamma_ci_high = 0.0;
  double C_hat = 0.0;
  double r_min = 0.0, r_max = 0.0;
  double rms_residual = 0.0;
  double max_abs_residual = 0.0;
  int points = 0;
  int bootstrap = 0;
  std::uint64_t seed = 0;
  bool insufficient_signal = false;
  std::vector<PerEta> per_eta;

  nlohmann::json to_json() const {
    nlohmann::json pe = nlohmann::json::array();
    for (const auto& e : per_eta)
      pe.push_back({{"eta", e.eta},
                    {"log_C", e.log_c},
                    {"rate", e.rate},
                    {"rate_ci95", {e.rate_ci_low, e.rate_ci_high}},
                    {"points", e.points},
                    {"below_noise", e.below_noise}});
    return {{"claim", to_string(claim)},
            {"dim", dim},
            {"side", side},
            {"claimed_exponent", claimed_base},
            {"claimed_form", "C/Lambda (|x|+1)^{-(base+alpha)} exp(-gamma sqrt(eta/Lambda)|x|)"},
            {"p_hat", p_hat},
            {"p_ci95", {p_ci_low, p_ci_high}},
            {"p_ols_stderr", p_stderr},
            {"alpha_hat", alpha_hat},
            {"alpha_ci95", {alpha_ci_low, alpha_ci_high}},
            {"gamma_hat", gamma_hat},
            {"gamma_ci95", {gamma_ci_low, gamma_ci_high}},
            {"C_hat", C_hat},
            {"window", {r_min, r_max}},
            {"residuals", {{"rms", rms_residual}, {"max_abs", max_abs_residual}, {"points", points}}},
            {"ci_method", "residual bootstrap, percentile"},
            {"bootstrap_replicates", bootstrap},
            {"seed", seed},
            {"insufficient_signal", insufficient_signal},
            {"per_eta", pe}};
  }
};

namespace detail {

struct ShellPoint {
  double r = 0.0;
  double y = 0.0;  ///< log |value|
};

/// Per integer shell round(|x|) in [r_min, r_max], the site with the largest magnitude.
inline std::vector<ShellPoint> shell_points(const GreensTable& t, double r_min, double r_max, double sigmas,
                                            int& below_noise) {
  const auto& g = t.grid();
  std::map<long, std::pair<double, std::size_t>> best;  // shell -> (magnitude, site)
  for (std::size_t x = 0; x < g.size(); ++x) {
    const double r = g.distance(x);
    if (r < r_min || r > r_max) continue;
    const long shell = std::lround(r);
    const double m = t.magnitude(x);
    auto it = best.find(shell);
    if (it == best.end() || m > it->second.first) best[shell] = {m, x};
  }
  std::vector<ShellPoint> out;
  below_noise = 0;
  for (const auto& [s, b] : best) {
    const double m = b.first;
    if (!(m > sigmas * t.magnitude_stderr(b.second)) || !(m > 0.0)) {
      ++below_noise;
      continue;
    }
    out.push_back({g.distance(b.second), std::log(m)});
  }
  return out;
}

struct JointFit {
  Eigen::VectorXd coef;  ///< [c_0..c_{E-1}, p, kappa_0..kappa_{E-1}]
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;
  double p_stderr = 0.0;
};

inline JointFit joint_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int E) {
  const auto f = least_squares(X, y);
  return {f.coef, X * f.coef, f.residuals, f.stderr_of(E)};
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Joint fit of log|value| = c_eta - p log(r + 1) - kappa_eta r over tables at
/// several eta (p shared), then gamma from kappa_eta ~ gamma sqrt(eta / Lambda).
inline DecayFitReport decay_fit(const std::vector<const GreensTable*>& tables, DecayClaim claim,
                                const DecayFitOptions& opt = {}) {
  if (tables.size() < 3) throw InvalidArgument("decay_fit: need tables at >= 3 values of eta");
  const auto& g = tables.front()->grid();
  for (const auto* t : tables)
    if (!(t->grid() == g)) throw InvalidArgument("decay_fit: tables on different grids");
  DecayFitReport rep;
  rep.claim = claim;
  rep.dim = g.dim();
  rep.side = g.side();
  rep.claimed_base = claim_base_exponent(claim, g.dim());
  rep.r_min = opt.r_min;
  rep.r_max = opt.r_max > 0.0 ? std::min(opt.r_max, g.side() / 4.0) : g.side() / 4.0;
  rep.seed = opt.seed;
  rep.bootstrap = opt.bootstrap;

  const int E = static_cast<int>(tables.size());
  std::vector<std::vector<detail::ShellPoint>> pts(tables.size());
  int total_window = 0, total_below = 0;
  for (std::size_t e = 0; e < tables.size(); ++e) {
    int below = 0;
    pts[e] = detail::shell_points(*tables[e], opt.r_min, rep.r_max, opt.noise_sigmas, below);
    rep.per_eta.push_back({tables[e]->eta});
    rep.per_eta.back().points = static_cast<int>(pts[e].size());
    rep.per_eta.back().below_noise = below;
    total_window += below + static_cast<int>(pts[e].size());
    total_below += below;
  }
  rep.insufficient_signal = 2 * total_below > total_window;
  for (const auto& p : pts)
    if (p.size() < 3) {
      rep.insufficient_signal = true;
      return rep;
    }

  std::size_t n = 0;
  for (const auto& p : pts) n += p.size();
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 2 * E + 1);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  Eigen::Index row = 0;
  for (int e = 0; e < E; ++e)
    for (const auto& p : pts[static_cast<std::size_t>(e)]) {
      X(row, e) = 1.0;
      X(row, E) = -std::log(p.r + 1.0);
      X(row, E + 1 + e) = -p.r;
      y(row) = p.y;
      ++row;
    }
  const auto fit = detail::joint_fit(X, y, E);
  rep.points = static_cast<int>(n);
  rep.p_hat = fit.coef(E);
  rep.p_stderr = fit.p_stderr;
  rep.rms_residual = std::sqrt(fit.residuals.squaredNorm() / static_cast<double>(n));
  rep.max_abs_residual = fit.residuals.cwiseAbs().maxCoeff();

  std::vector<double> s(tables.size());
  for (int e = 0; e < E; ++e) s[static_cast<std::size_t>(e)] = std::sqrt(tables[static_cast<std::size_t>(e)]->eta / opt.Lambda);
  auto gamma_of = [&](const Eigen::VectorXd& coef) {
    double num = 0.0, den = 0.0;
    for (int e = 0; e < E; ++e) {
      num += coef(E + 1 + e) * s[static_cast<std::size_t>(e)];
      den += s[static_cast<std::size_t>(e)] * s[static_cast<std::size_t>(e)];
    }
    return num / den;
  };
  rep.gamma_hat = gamma_of(fit.coef);
  double max_c = -INFINITY;
  for (int e = 0; e < E; ++e) {
    rep.per_eta[static_cast<std::size_t>(e)].log_c = fit.coef(e);
    rep.per_eta[static_cast<std::size_t>(e)].rate = fit.coef(E + 1 + e);
    max_c = std::max(max_c, fit.coef(e));
  }
  rep.C_hat = opt.Lambda * std::exp(max_c);

  // Residual bootstrap.
  std::vector<double> bp, bg;
  std::vector<std::vector<double>> brate(static_cast<std::size_t>(E));
  if (opt.bootstrap > 0) {
    auto rng = CounterRng(opt.seed).substream(stream_tag::kBootstrap);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    for (int b = 0; b < opt.bootstrap; ++b) {
      Eigen::VectorXd yb = fit.fitted;
      for (Eigen::Index i = 0; i < yb.size(); ++i)
        yb(i) += fit.residuals(static_cast<Eigen::Index>(rng.next_u64() % n));
      const Eigen::VectorXd cb = qr.solve(yb);
      bp.push_back(cb(E));
      bg.push_back(gamma_of(cb));
      for (int e = 0; e < E; ++e) brate[static_cast<std::size_t>(e)].push_back(cb(E + 1 + e));
    }
    rep.p_ci_low = detail::percentile(bp, 0.025);
    rep.p_ci_high = detail::percentile(bp, 0.975);
    rep.gamma_ci_low = detail::percentile(bg, 0.025);
    rep.gamma_ci_high = detail::percentile(bg, 0.975);
    for (int e = 0; e < E; ++e) {
      rep.per_eta[static_cast<std::size_t>(e)].rate_ci_low = detail::percentile(brate[static_cast<std::size_t>(e)], 0.025);
      rep.per_eta[static_cast<std::size_t>(e)].rate_ci_high = detail::percentile(brate[static_cast<std::size_t>(e)], 0.975);
    }
  } else {
    const double t = student_t_critical(static_cast<double>(n) - (2 * E + 1));
    rep.p_ci_low = rep.p_hat - t * rep.p_stderr;
    rep.p_ci_high = rep.p_hat + t * rep.p_stderr;
    rep.gamma_ci_low = rep.gamma_ci_high = rep.gamma_hat;
  }
  rep.alpha_hat = rep.p_hat - rep.claimed_base;
  rep.alpha_ci_low = rep.p_ci_low - rep.claimed_base;
  rep.alpha_ci_high = rep.p_ci_high - rep.claimed_base;
  return rep;
}

// ---------------------------------------------------------------------------
// Export

inline void write_table_csv(std::ostream& os, const GreensTable& t, Provenance prov = {}) {
  const auto& g = t.grid();
  os << "# hlab table kind=" << to_string(t.kind) << " eta=" << detail::fmt_double(t.eta) << " n_samples=" << t.n_samples
     << " seed=" << prov.seed << " config_hash=" << prov.config_hash << '\n';
  for (int i = 1; i <= g.dim(); ++i) os << "x_" << i << ',';
  const int c = t.components();
  for (int k = 0; k < c; ++k) os << (c == 1 ? std::string("value") : "value_" + std::to_string(k)) << ',';
  for (int k = 0; k < c; ++k) os << (c == 1 ? std::string("stderr") : "stderr_" + std::to_string(k)) << (k + 1 < c ? "," : "");
  os << '\n';
  for (std::size_t x = 0; x < g.size(); ++x) {
    for (int v : g.centered(x)) os << v << ',';
    for (int k = 0; k < c; ++k) os << detail::fmt_double(t.values(k, x)) << ',';
    for (int k = 0; k < c; ++k) os << detail::fmt_double(t.stderr(k, x)) << (k + 1 < c ? "," : "");
    os << '\n';
  }
}

}  // namespace hlab
