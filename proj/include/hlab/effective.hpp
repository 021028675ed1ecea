#pragma once

// Effective symbol q(xi, eta) = <a (grad_xi Phi + I)>, its series form
// <a> - Lambda sum_m h_m, extrapolation to q(0, 0), and Hoelder scans.

#include <Eigen/Dense>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hlab/environments.hpp"
#include "hlab/parallel.hpp"
#include "hlab/solver.hpp"
#include "hlab/stats.hpp"

namespace hlab {

enum class CorrectorMethod { direct, neumann };

struct EffectiveSymbol {
  FourierPoint xi;
  double eta = 0.0;
  Eigen::MatrixXcd q;       ///< Hermitian-symmetrized sample mean
  Eigen::MatrixXd stderr;   ///< entrywise Monte Carlo standard error of the complex entries
  int n_samples = 0;
  int side = 0;
  double hermitian_defect = 0.0;  ///< worst ||q_s - q_s^*|| / ||q_s|| over samples, before symmetrization
  double max_residual = 0.0;
  std::vector<Eigen::MatrixXcd> per_sample;

  int dim() const { return static_cast<int>(q.rows()); }

  /// Smallest and largest eigenvalue of the symmetric real part of q.
  std::pair<double, double> rayleigh_range() const {
    const Eigen::MatrixXd re = q.real();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (re + re.transpose()));
    return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
  }

  /// Extremal Rayleigh quotients of Re q together with their standard errors,
  /// estimated from the per-sample quotients along the extremal eigenvectors.
  struct RayleighBounds {
    MeanStderr min, max;
  };
  RayleighBounds rayleigh_bounds() const {
    const Eigen::MatrixXd re = q.real();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (re + re.transpose()));
    const Eigen::VectorXd vmin = es.eigenvectors().col(0);
    const Eigen::VectorXd vmax = es.eigenvectors().col(dim() - 1);
    std::vector<double> lo, hi;
    for (const auto& s : per_sample) {
      const Eigen::MatrixXd r = s.real();
      lo.push_back(vmin.dot(r * vmin));
      hi.push_back(vmax.dot(r * vmax));
    }
    auto a = mean_stderr(lo), b = mean_stderr(hi);
    a.mean = es.eigenvalues().minCoeff();
    b.mean = es.eigenvalues().maxCoeff();
    return {a, b};
  }

  /// True if the extremal Rayleigh quotients lie in [lambda, Lambda] up to 3 standard errors.
  bool within_bounds(const EllipticityBounds& bounds, double slack = 1e-12) const {
    const auto r = rayleigh_bounds();
    return r.min.mean >= bounds.lambda - 3.0 * r.min.stderr - slack &&
           r.max.mean <= bounds.Lambda + 3.0 * r.max.stderr + slack;
  }
};

/// q_jk = mean_x [a (grad_xi Phi_k + e_k)]_j for one sample.
inline Eigen::MatrixXcd q_from_corrector(const CoefficientField& a, const CorrectorSolution& sol) {
  const int d = a.dim();
  Eigen::MatrixXcd q(d, d);
  for (int k = 0; k < d; ++k) {
    const auto flux = apply_coefficient(a, detail::add_unit(sol.grad[static_cast<std::size_t>(k)], k));
    for (int j = 0; j < d; ++j) q(j, k) = mean(flux, j);
  }
  return q;
}

inline double hermitian_defect(const Eigen::MatrixXcd& q) {
  const double n = spectral_norm(q);
  return n > 0.0 ? spectral_norm(q - q.adjoint()) / n : 0.0;
}

/// Mean, entrywise standard error and symmetrization of per-sample matrices.
inline EffectiveSymbol summarize_symbol(const FourierPoint& xi, double eta, int side,
                                        std::vector<Eigen::MatrixXcd> per_sample) {
  if (per_sample.empty()) throw InvalidArgument("summarize_symbol: no samples");
  const auto d = per_sample.front().rows();
  EffectiveSymbol s;
  s.xi = xi;
  s.eta = eta;
  s.side = side;
  s.n_samples = static_cast<int>(per_sample.size());
  Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(d, d);
  for (const auto& m : per_sample) {
    sum += m;
    s.hermitian_defect = std::max(s.hermitian_defect, hermitian_defect(m));
  }
  const Eigen::MatrixXcd mean_q = sum / static_cast<double>(per_sample.size());
  s.stderr = Eigen::MatrixXd::Zero(d, d);
  if (per_sample.size() > 1) {
    for (const auto& m : per_sample) s.stderr += (m - mean_q).cwiseAbs2();
    const double n = static_cast<double>(per_sample.size());
    s.stderr = (s.stderr / ((n - 1.0) * n)).cwiseSqrt();
  }
  s.q = 0.5 * (mean_q + mean_q.adjoint());
  s.per_sample = std::move(per_sample);
  return s;
}

/// Coefficient fields for samples 0..n-1 of `env`.
inline std::vector<CoefficientField> sample_ensemble(const EnvironmentSpec& env, const TorusGrid& grid, int n_samples,
                                                     std::uint64_t seed, int threads = 1) {
  if (n_samples < 1) throw InvalidArgument("sample_ensemble: n_samples must be >= 1");
  env.validate();
  std::vector<std::optional<CoefficientField>> slots(static_cast<std::size_t>(n_samples));
  parallel_for(slots.size(), threads, [&](std::size_t i) { slots[i] = sample_coefficients(env, grid, seed, i); });
  std::vector<CoefficientField> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// q(xi, eta) over a fixed ensemble of coefficient fields.
inline EffectiveSymbol q_of_xi_eta(std::span<const CoefficientField> ensemble, const FourierPoint& xi, double eta,
                                   const SolveControls& controls = {}, int threads = 1,
                                   CorrectorMethod method = CorrectorMethod::direct, int max_terms = 400) {
  check_eta(eta, "q_of_xi_eta");
  if (ensemble.empty()) throw InvalidArgument("q_of_xi_eta: n_samples must be >= 1");
  std::vector<Eigen::MatrixXcd> qs(ensemble.size());
  std::vector<double> res(ensemble.size());
  parallel_for(ensemble.size(), threads, [&](std::size_t i) {
    const auto sol = method == CorrectorMethod::direct ? solve_corrector_direct(ensemble[i], xi, eta, controls)
                                                       : solve_corrector_neumann(ensemble[i], xi, eta, max_terms, controls);
    qs[i] = q_from_corrector(ensemble[i], sol);
    res[i] = sol.residual;
  });
  auto s = summarize_symbol(xi, eta, ensemble.front().grid().side(), std::move(qs));
  s.max_residual = *std::max_element(res.begin(), res.end());
  return s;
}

inline EffectiveSymbol q_of_xi_eta(const EnvironmentSpec& env, const TorusGrid& grid, const FourierPoint& xi,
                                   double eta, int n_samples, const SolveControls& controls, std::uint64_t seed,
                                   int threads = 1) {
  check_eta(eta, "q_of_xi_eta");
  const auto ens = sample_ensemble(env, grid, n_samples, seed, threads);
  return q_of_xi_eta(ens, xi, eta, controls, threads);
}

// ---------------------------------------------------------------------------
// Series form

struct SeriesResult {
  EffectiveSymbol symbol;
  std::vector<double> term_norms;  ///< ||h_m||, m = 1..m_max, of the ensemble-mean terms
  double tail_bound = 0.0;         ///< Lambda r^{M+2} / (1 - r), r = 1 - lambda / Lambda
  double fitted_ratio = 0.0;       ///< geometric ratio fitted to the term norms
  int fitted_terms = 0;
};

/// h_m e_k = mean(b v_m), v_0 = e_k, v_m = P T[b v_{m-1}], for one sample; returns h_1..h_M.
inline std::vector<Eigen::MatrixXcd> series_terms(const CoefficientField& a, const FourierPoint& xi, double eta, int m_max) {
  const int d = a.dim();
  const double Lambda = a.bounds.Lambda;
  CoefficientField b = a;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (auto& v : b.a.component(i * d + j)) v = (i == j ? 1.0 : 0.0) - v / Lambda;
  std::vector<Eigen::MatrixXcd> h(static_cast<std::size_t>(m_max), Eigen::MatrixXcd::Zero(d, d));
  for (int k = 0; k < d; ++k) {
    ComplexField v(a.grid(), d);
    for (auto& x : v.component(k)) x = 1.0;
    for (int m = 1; m <= m_max; ++m) {
      v = project_zero_mean(apply_T(apply_coefficient(b, v), xi, eta, Lambda));
      const auto bv = apply_coefficient(b, v);
      for (int j = 0; j < d; ++j) h[static_cast<std::size_t>(m - 1)](j, k) = mean(bv, j);
    }
  }
  return h;
}

inline SeriesResult q_via_series(std::span<const CoefficientField> ensemble, const FourierPoint& xi, double eta,
                                 int m_max, int threads = 1) {
  check_eta(eta, "q_via_series");
  if (m_max < 1) throw InvalidArgument("q_via_series: m_max must be >= 1");
  if (ensemble.empty()) throw InvalidArgument("q_via_series: n_samples must be >= 1");
  const int d = ensemble.front().dim();
  std::vector<Eigen::MatrixXcd> qs(ensemble.size());
  std::vector<std::vector<Eigen::MatrixXcd>> terms(ensemble.size());
  parallel_for(ensemble.size(), threads, [&](std::size_t i) {
    const auto& a = ensemble[i];
    terms[i] = series_terms(a, xi, eta, m_max);
    Eigen::MatrixXcd q(d, d);
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) q(j, k) = mean(a.a, j * d + k);
    for (const auto& h : terms[i]) q -= a.bounds.Lambda * h;
    qs[i] = q;
  });
  SeriesResult r;
  r.symbol = summarize_symbol(xi, eta, ensemble.front().grid().side(), std::move(qs));
  for (int m = 0; m < m_max; ++m) {
    Eigen::MatrixXcd hm = Eigen::MatrixXcd::Zero(d, d);
    for (const auto& t : terms) hm += t[static_cast<std::size_t>(m)];
    r.term_norms.push_back(spectral_norm(hm / static_cast<double>(terms.size())));
  }
  const auto& bounds = ensemble.front().bounds;
  const double ratio = bounds.contraction();
  r.tail_bound = ratio < 1.0 ? bounds.Lambda * std::pow(ratio, m_max + 2) / (1.0 - ratio) : 0.0;

  // Geometric fit on terms above round-off.
  std::vector<double> ms, logs;
  for (int m = 0; m < m_max; ++m)
    if (r.term_norms[static_cast<std::size_t>(m)] > 1e-13) {
      ms.push_back(m + 1.0);
      logs.push_back(std::log(r.term_norms[static_cast<std::size_t>(m)]));
    }
  r.fitted_terms = static_cast<int>(ms.size());
  r.fitted_ratio = ms.size() >= 2 ? std::exp(fit_line(ms, logs).slope) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// q(0, 0) by extrapolation in sqrt(eta)

struct Q00Extrapolation {
  EffectiveSymbol symbol;                 ///< eta = 0; stderr is the Monte Carlo error of the extrapolant
  Eigen::MatrixXd spread;                 ///< |quadratic - linear| extrapolant difference, entrywise
  std::vector<EffectiveSymbol> ladder;    ///< q(0, eta) along the ladder
  bool non_monotone = false;

  /// Combined uncertainty of entry (j, k): Monte Carlo plus extrapolation spread.
  double uncertainty(int j, int k) const { return std::hypot(symbol.stderr(j, k), spread(j, k)); }
};

namespace detail {
/// Value at s = 0 of the least-squares polynomial of degree `deg` through (s_i, y_i).
inline double polynomial_intercept(std::span<const double> s, std::span<const double> y, int deg) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd X(n, deg + 1);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int p = 0; p <= deg; ++p) X(i, p) = std::pow(s[static_cast<std::size_t>(i)], p);
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  return X.colPivHouseholderQr().solve(Y)(0);
}
}  // namespace detail

/// Per-sample polynomial extrapolation of q(0, eta) to eta = 0 in s = sqrt(eta):
/// quadratic through the full ladder, compared against the line through the two
/// smallest eta values for the spread.
inline Q00Extrapolation extrapolate_q00(std::span<const CoefficientField> ensemble, std::vector<double> eta_ladder,
                                        const SolveControls& controls = {}, int threads = 1) {
  if (eta_ladder.size() < 3) throw InvalidArgument("extrapolate_q00: eta ladder needs >= 3 entries");
  for (std::size_t i = 0; i < eta_ladder.size(); ++i) {
    check_eta(eta_ladder[i], "extrapolate_q00");
    if (i > 0 && !(eta_ladder[i] < eta_ladder[i - 1]))
      throw InvalidArgument("extrapolate_q00: eta ladder must be strictly decreasing");
  }
  if (ensemble.empty()) throw InvalidArgument("extrapolate_q00: n_samples must be >= 1");
  const int d = ensemble.front().dim();
  const auto xi0 = FourierPoint::zero(d);
  Q00Extrapolation out;
  for (double eta : eta_ladder) out.ladder.push_back(q_of_xi_eta(ensemble, xi0, eta, controls, threads));

  std::vector<double> s;
  for (double eta : eta_ladder) s.push_back(std::sqrt(eta));
  const std::size_t n = eta_ladder.size();
  const int deg = static_cast<int>(std::min<std::size_t>(2, n - 1));
  const std::vector<double> s_last2{s[n - 2], s[n - 1]};

  std::vector<Eigen::MatrixXcd> per_sample;
  Eigen::MatrixXcd lin_sum = Eigen::MatrixXcd::Zero(d, d);
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    Eigen::MatrixXcd q0(d, d), q1(d, d);
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) {
        std::vector<double> re, im;
        for (const auto& l : out.ladder) {
          re.push_back(l.per_sample[i](j, k).real());
          im.push_back(l.per_sample[i](j, k).imag());
        }
        q0(j, k) = {detail::polynomial_intercept(s, re, deg), detail::polynomial_intercept(s, im, deg)};
        const std::vector<double> re2{re[n - 2], re[n - 1]}, im2{im[n - 2], im[n - 1]};
        q1(j, k) = {detail::polynomial_intercept(s_last2, re2, 1), detail::polynomial_intercept(s_last2, im2, 1)};
      }
    per_sample.push_back(q0);
    lin_sum += q1;
  }
  out.symbol = summarize_symbol(xi0, 0.0, ensemble.front().grid().side(), std::move(per_sample));
  const Eigen::MatrixXcd lin = lin_sum / static_cast<double>(ensemble.size());
  out.spread = (out.symbol.q - 0.5 * (lin + lin.adjoint())).cwiseAbs();

  // Monotonicity along the ladder, entrywise on the diagonal, with paired errors.
  for (std::size_t l = 1; l < n && !out.non_monotone; ++l) {
    if (l + 1 >= n) break;
    for (int j = 0; j < d; ++j) {
      std::vector<double> d1, d2;
      for (std::size_t i = 0; i < ensemble.size(); ++i) {
        d1.push_back(out.ladder[l - 1].per_sample[i](j, j).real() - out.ladder[l].per_sample[i](j, j).real());
        d2.push_back(out.ladder[l].per_sample[i](j, j).real() - out.ladder[l + 1].per_sample[i](j, j).real());
      }
      const auto m1 = mean_stderr(d1), m2 = mean_stderr(d2);
      // consecutive steps of opposite sign, both resolved beyond 3 sigma
      if (m1.mean * m2.mean < 0.0 && std::abs(m1.mean) > 3.0 * m1.stderr && std::abs(m2.mean) > 3.0 * m2.stderr)
        out.non_monotone = true;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hoelder scan

/// Per-sample q at (xi, eta); all calls must use the same ensemble so that differences pair up.
using SymbolEvaluator = std::function<std::vector<Eigen::MatrixXcd>(const FourierPoint&, double)>;

struct HolderDirectionFit {
  bool degenerate = true;
  double exponent = 0.0;  ///< fitted alpha (for eta already doubled)
  double ci_low = 0.0, ci_high = 0.0;
  double constant = 0.0;  ///< C_1 with envelope ~ C_1 Lambda delta^{slope}
  double rms_residual = 0.0;
  double delta_min = 0.0, delta_max = 0.0;  ///< window of bins used
  int bins_used = 0;
  int pairs_total = 0;
  int pairs_below_noise = 0;
};

struct HolderScanReport {
  struct Pair {
    char axis = 'x';
    int i = 0, j = 0;
    double delta = 0.0;
    double dq = 0.0;
    double noise = 0.0;
    bool used = false;
  };
  std::vector<std::vector<double>> xi_grid;
  std::vector<double> eta_grid;
  double eta_fixed = 0.0;
  std::vector<double> xi_fixed;
  double Lambda = 1.0;
  std::vector<Pair> pairs;
  HolderDirectionFit xi_fit, eta_fit;
  double alpha = 0.0;  ///< min(1, alpha_xi, alpha_eta) over the non-degenerate directions
  double alpha_raw_xi = 0.0, alpha_raw_eta = 0.0;
  double C1 = 0.0;
  bool degenerate = false;
  bool insufficient_signal = false;

  nlohmann::json to_json() const {
    auto dir = [](const HolderDirectionFit& f) {
      return nlohmann::json{{"degenerate", f.degenerate},       {"alpha", f.exponent},
                            {"alpha_ci95", {f.ci_low, f.ci_high}}, {"C1", f.constant},
                            {"rms_log_residual", f.rms_residual}, {"window", {f.delta_min, f.delta_max}},
                            {"bins_used", f.bins_used},         {"pairs", f.pairs_total},
                            {"pairs_below_noise", f.pairs_below_noise}};
    };
    nlohmann::json jp = nlohmann::json::array();
    for (const auto& p : pairs)
      jp.push_back({{"axis", std::string(1, p.axis)}, {"i", p.i}, {"j", p.j}, {"delta", p.delta},
                    {"norm_dq", p.dq}, {"noise_3sigma", p.noise}, {"used", p.used}});
    return {{"xi_grid", xi_grid},
            {"eta_grid", eta_grid},
            {"eta_fixed", eta_fixed},
            {"xi_fixed", xi_fixed},
            {"Lambda", Lambda},
            {"xi_direction", dir(xi_fit)},
            {"eta_direction", dir(eta_fit)},
            {"alpha", alpha},
            {"alpha_raw_xi", alpha_raw_xi},
            {"alpha_raw_eta", alpha_raw_eta},
            {"C1", C1},
            {"degenerate", degenerate},
            {"insufficient_signal", insufficient_signal},
            {"matrix_norm", "spectral"},
            {"pairs", jp}};
  }
};

namespace detail {

struct PairStat {
  double norm = 0.0;
  double noise = 0.0;
};

inline PairStat paired_difference(const std::vector<Eigen::MatrixXcd>& a, const std::vector<Eigen::MatrixXcd>& b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("holder_scan: evaluator returned unpaired samples");
  std::vector<Eigen::MatrixXcd> diff;
  for (std::size_t i = 0; i < a.size(); ++i) diff.push_back(a[i] - b[i]);
  const auto s = summarize_symbol(FourierPoint{}, 0.0, 0, std::move(diff));
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(a[0].rows(), a[0].cols());
  for (const auto& x : s.per_sample) m += x;
  m /= static_cast<double>(s.per_sample.size());
  return {spectral_norm(m), 3.0 * s.stderr.norm()};
}

/// Fits log(envelope) = c + slope log(delta), where the envelope is the
/// largest difference among resolved pairs in each distinct-delta bin.
inline HolderDirectionFit fit_modulus(std::vector<HolderScanReport::Pair*>& pairs, double scale, double Lambda,
                                      double exponent_factor) {
  HolderDirectionFit f;
  f.pairs_total = static_cast<int>(pairs.size());
  std::map<long long, std::pair<double, double>> bins;  // key -> (delta, envelope)
  for (auto* p : pairs) {
    const double floor = std::max(p->noise, 1e-13 * scale);
    if (!(p->dq > floor) || !(p->delta > 0.0)) {
      ++f.pairs_below_noise;
      continue;
    }
    p->used = true;
    const auto key = std::llround(std::log(p->delta) * 1e8);
    auto& b = bins[key];
    b.first = p->delta;
    b.second = std::max(b.second, p->dq);
  }
  if (bins.size() < 3) return f;
  std::vector<double> x, y;
  for (const auto& [k, b] : bins) {
    x.push_back(std::log(b.first));
    y.push_back(std::log(b.second));
  }
  const auto line = fit_line(x, y);
  const double t = student_t_critical(line.dof);
  f.degenerate = false;
  f.exponent = exponent_factor * line.slope;
  f.ci_low = exponent_factor * (line.slope - t * line.slope_stderr);
  f.ci_high = exponent_factor * (line.slope + t * line.slope_stderr);
  f.constant = std::exp(line.intercept) / Lambda;
  f.rms_residual = line.rms_residual;
  f.delta_min = std::exp(*std::min_element(x.begin(), x.end()));
  f.delta_max = std::exp(*std::max_element(x.begin(), x.end()));
  f.bins_used = static_cast<int>(bins.size());
  return f;
}

}  // namespace detail

/// Pairwise differences of q along the xi grid (at eta_grid[0]) and along the
/// eta grid (at xi_grid[0]); modulus-of-continuity fits in |dxi| and |deta| / Lambda.
inline HolderScanReport holder_scan(const SymbolEvaluator& evaluate, const std::vector<std::vector<double>>& xi_grid,
                                    const std::vector<double>& eta_grid, double Lambda, int threads = 1) {
  if (xi_grid.size() < 8 || eta_grid.size() < 8)
    throw InvalidArgument("holder_scan: need >= 8 grid points per axis");
  HolderScanReport r;
  r.xi_grid = xi_grid;
  r.eta_grid = eta_grid;
  r.eta_fixed = eta_grid.front();
  r.xi_fixed = xi_grid.front();
  r.Lambda = Lambda;

  std::vector<std::vector<Eigen::MatrixXcd>> at_xi(xi_grid.size()), at_eta(eta_grid.size());
  parallel_for(xi_grid.size() + eta_grid.size(), threads, [&](std::size_t t) {
    if (t < xi_grid.size()) at_xi[t] = evaluate(FourierPoint(xi_grid[t]), r.eta_fixed);
    else at_eta[t - xi_grid.size()] = evaluate(FourierPoint(r.xi_fixed), eta_grid[t - xi_grid.size()]);
  });

  double scale = 0.0;
  for (const auto& v : at_xi)
    for (const auto& m : v) scale = std::max(scale, spectral_norm(m));

  for (std::size_t i = 0; i < xi_grid.size(); ++i)
    for (std::size_t j = i + 1; j < xi_grid.size(); ++j) {
      double dx = 0.0;
      for (std::size_t c = 0; c < xi_grid[i].size(); ++c) dx += std::pow(xi_grid[i][c] - xi_grid[j][c], 2);
      const auto s = detail::paired_difference(at_xi[i], at_xi[j]);
      r.pairs.push_back({'x', static_cast<int>(i), static_cast<int>(j), std::sqrt(dx), s.norm, s.noise, false});
    }
  for (std::size_t i = 0; i < eta_grid.size(); ++i)
    for (std::size_t j = i + 1; j < eta_grid.size(); ++j) {
      const auto s = detail::paired_difference(at_eta[i], at_eta[j]);
      r.pairs.push_back({'e', static_cast<int>(i), static_cast<int>(j), std::abs(eta_grid[i] - eta_grid[j]) / Lambda,
                         s.norm, s.noise, false});
    }

  std::vector<HolderScanReport::Pair*> px, pe;
  for (auto& p : r.pairs) (p.axis == 'x' ? px : pe).push_back(&p);
  r.xi_fit = detail::fit_modulus(px, scale, Lambda, 1.0);
  r.eta_fit = detail::fit_modulus(pe, scale, Lambda, 2.0);
  r.alpha_raw_xi = r.xi_fit.exponent;
  r.alpha_raw_eta = r.eta_fit.exponent;
  r.degenerate = r.xi_fit.degenerate && r.eta_fit.degenerate;
  const int below = r.xi_fit.pairs_below_noise + r.eta_fit.pairs_below_noise;
  r.insufficient_signal = 2 * below > static_cast<int>(r.pairs.size());
  double a = 1.0;
  double c = 0.0;
  for (const auto* f : {&r.xi_fit, &r.eta_fit})
    if (!f->degenerate) {
      a = std::min(a, f->exponent);
      c = std::max(c, f->constant);
    }
  r.alpha = r.degenerate ? 0.0 : a;
  r.C1 = c;
  return r;
}

/// Evaluator backed by direct corrector solves over a fixed ensemble.
inline SymbolEvaluator ensemble_evaluator(std::span<const CoefficientField> ensemble, SolveControls controls = {}) {
  return [ensemble, controls](const FourierPoint& xi, double eta) {
    return q_of_xi_eta(ensemble, xi, eta, controls, 1).per_sample;
  };
}

// ---------------------------------------------------------------------------
// CSV

inline void write_symbol_csv_header(std::ostream& os, int d) {
  for (int j = 1; j <= d; ++j) os << "xi_" << j << ',';
  os << "eta";
  for (const char* part : {"re_q_", "im_q_", "stderr_"})
    for (int j = 1; j <= d; ++j)
      for (int k = 1; k <= d; ++k) os << ',' << part << j << k;
  os << ",n_samples\n";
}

inline void write_symbol_csv_row(std::ostream& os, const EffectiveSymbol& s) {
  const int d = s.dim();
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (int j = 0; j < d; ++j) os << num(s.xi.dim() ? s.xi[j] : 0.0) << ',';
  os << num(s.eta);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) os << ',' << num(s.q(j, k).real());
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) os << ',' << num(s.q(j, k).imag());
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) os << ',' << num(s.stderr(j, k));
  os << ',' << s.n_samples << '\n';
}

}  // namespace hlab
