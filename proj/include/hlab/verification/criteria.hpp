#pragma once

// Acceptance suite. Each criterion computes its quantities, compares them with
// an oracle or a bound, and returns pass/fail together with a digest of every
// artifact it produced, so that reruns can be compared byte for byte.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json.hpp>

#include "hlab/config.hpp"
#include "hlab/effective.hpp"
#include "hlab/environments.hpp"
#include "hlab/greens.hpp"
#include "hlab/io.hpp"
#include "hlab/solver.hpp"
#include "hlab/verification/oracles.hpp"

namespace hlab::verify {

struct SuiteOptions {
  int threads = 1;
  int rerun_threads = 0;  ///< thread count of the reproducibility rerun; 0 picks threads + 3
  std::uint64_t seed = 20261015;
  int green_sources = 256;  ///< point sources per sample for criteria 6 and 7
  std::filesystem::path artifacts;  ///< empty: keep artifacts in memory only
};

struct CriterionResult {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string summary;
  nlohmann::json details;
  std::uint64_t digest = 0;
  double seconds = 0.0;

  CriterionResult() = default;
  CriterionResult(int i, std::string t) : id(i), title(std::move(t)) {}
};

inline std::string fmt(double v, int prec = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

/// Collects the text artifacts of one criterion.
class Artifacts {
 public:
  void add(const std::string& name, std::string body) { files_.emplace_back(name, std::move(body)); }
  void add_json(const std::string& name, const nlohmann::json& j) { add(name, j.dump(1) + "\n"); }
  std::uint64_t digest() const {
    std::string all;
    for (const auto& [n, b] : files_) all += n + '\0' + b + '\0';
    return fnv1a64(all);
  }
  void save(const std::filesystem::path& dir) const {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    for (const auto& [n, b] : files_) std::ofstream(dir / n, std::ios::binary) << b;
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

/// State shared between criteria within one pass of the suite.
struct Context {
  SuiteOptions opt;
  std::map<int, std::vector<EffectiveSymbol>> symbols;  // criterion 3 results reused by 4
  std::map<std::string, GreensTable> green;             // averaged tables keyed by eta, shared by 6 and 7
  std::vector<CoefficientField> green_ensemble;

  Context() = default;
  explicit Context(SuiteOptions o) : opt(std::move(o)) {}
};

// Fixed experimental setups.
inline constexpr double kGamma = 0.5;

inline std::vector<double> crit3_axis() {
  const double pi = std::numbers::pi;
  return {-pi / 2, -pi / 4, 0.0, pi / 4, pi / 2};
}
inline std::vector<double> crit3_etas() { return {1e-2, 1e-1, 1.0}; }

inline std::string symbol_csv(const std::vector<EffectiveSymbol>& rows) {
  std::ostringstream os;
  if (rows.empty()) return {};
  write_symbol_csv_header(os, rows.front().dim());
  for (const auto& s : rows) write_symbol_csv_row(os, s);
  return os.str();
}

// ---------------------------------------------------------------------------

inline CriterionResult criterion_1(Context& ctx, Artifacts& art) {
  CriterionResult r{1, "1-d homogenization oracle"};
  const TorusGrid g(1, 4096);
  const auto ens = sample_ensemble(EnvironmentSpec::bernoulli(kGamma), g, 64, ctx.opt.seed, ctx.opt.threads);
  const auto ex = extrapolate_q00(ens, {1e-2, 1e-3, 1e-4}, {}, ctx.opt.threads);
  std::vector<double> hm;
  for (const auto& a : ens) hm.push_back(oracle::harmonic_mean_1d(a));
  const auto oracle_mean = mean_stderr(hm);
  const double limit = oracle::bernoulli_harmonic_mean(kGamma);
  const double q = ex.symbol.q(0, 0).real();
  const double rel_sample = std::abs(q - oracle_mean.mean) / oracle_mean.mean;
  const double rel_limit = std::abs(q - limit) / limit;
  r.pass = rel_sample <= 0.02 && rel_limit <= 0.02;
  r.summary = "q00=" + fmt(q, 6) + " +- " + fmt(ex.uncertainty(0, 0), 2) + ", oracle " + fmt(oracle_mean.mean, 6) +
              " (rel " + fmt(rel_sample, 2) + "), limit " + fmt(limit, 4) + " (rel " + fmt(rel_limit, 2) + ")";
  r.details = {{"q00", q},           {"uncertainty", ex.uncertainty(0, 0)}, {"spread", ex.spread(0, 0)},
               {"oracle_mean", oracle_mean.mean}, {"oracle_stderr", oracle_mean.stderr}, {"limit", limit},
               {"rel_err_sample_oracle", rel_sample}, {"rel_err_limit", rel_limit}, {"non_monotone", ex.non_monotone}};
  std::vector<EffectiveSymbol> rows = ex.ladder;
  rows.push_back(ex.symbol);
  art.add("q00_ladder.csv", symbol_csv(rows));
  return r;
}

inline CriterionResult criterion_2(Context& ctx, Artifacts& art) {
  CriterionResult r{2, "constant-coefficient exactness"};
  double worst_q = 0.0, worst_g = 0.0;
  std::ostringstream log;
  for (int d : {1, 2}) {
    const TorusGrid g(d, d == 1 ? 64 : 16);
    for (double c : {0.5, 1.0, 2.0}) {
      const auto env = EnvironmentSpec::constant(d, c);
      const auto ens = sample_ensemble(env, g, 2, ctx.opt.seed, ctx.opt.threads);
      for (double xi1 : {0.0, 0.7, -2.1})
        for (double eta : {1e-3, 0.3}) {
          std::vector<double> xi(static_cast<std::size_t>(d), xi1);
          if (d == 2) xi[1] = 0.4;
          const auto s = q_of_xi_eta(ens, FourierPoint(xi), eta, {}, ctx.opt.threads);
          const double err = (s.q - c * Eigen::MatrixXcd::Identity(d, d)).cwiseAbs().maxCoeff();
          worst_q = std::max(worst_q, err);
          log << "q d=" << d << " c=" << c << " xi1=" << xi1 << " eta=" << eta << " err=" << fmt(err, 3) << '\n';
        }
      const double eta = 0.1;
      GreenEstimator est;
      est.sources_per_sample = 3;
      const auto avg = averaged_green(ens, eta, {}, est, ctx.opt.seed, ctx.opt.threads);
      const auto ref = oracle::constant_green(g, c, eta);
      double err = 0.0;
      for (std::size_t x = 0; x < g.size(); ++x) err = std::max(err, std::abs(avg.values[x] - ref(static_cast<Eigen::Index>(x))));
      err /= ref.cwiseAbs().maxCoeff();
      worst_g = std::max(worst_g, err);
      log << "green d=" << d << " c=" << c << " rel_err=" << fmt(err, 3) << '\n';
    }
  }
  // Solver tolerance 1e-10 on the relative residual; the condition number of
  // eta + c grad^* grad at eta = 0.1 is below 100.
  r.pass = worst_q <= 1e-10 && worst_g <= 1e-8;
  r.summary = "max |q - cI| = " + fmt(worst_q, 3) + ", max rel |G_avg - G_c| = " + fmt(worst_g, 3);
  r.details = {{"max_q_error", worst_q}, {"max_green_rel_error", worst_g}};
  art.add("log.txt", log.str());
  return r;
}

inline const std::vector<EffectiveSymbol>& crit3_symbols(Context& ctx) {
  auto it = ctx.symbols.find(3);
  if (it != ctx.symbols.end()) return it->second;
  const TorusGrid g(2, 32);
  const auto ens = sample_ensemble(EnvironmentSpec::bernoulli(kGamma), g, 32, ctx.opt.seed + 3, ctx.opt.threads);
  std::vector<EffectiveSymbol> out;
  for (double x1 : crit3_axis())
    for (double x2 : crit3_axis())
      for (double eta : crit3_etas()) out.push_back(q_of_xi_eta(ens, FourierPoint({x1, x2}), eta, {}, ctx.opt.threads));
  return ctx.symbols[3] = std::move(out);
}

inline CriterionResult criterion_3(Context& ctx, Artifacts& art) {
  CriterionResult r{3, "symbol bounds"};
  const auto& syms = crit3_symbols(ctx);
  const EllipticityBounds b{1.0 - kGamma, 1.0 + kGamma};
  int violations = 0;
  double lo = INFINITY, hi = -INFINITY, defect = 0.0;
  for (const auto& s : syms) {
    if (!s.within_bounds(b)) ++violations;
    const auto rb = s.rayleigh_bounds();
    lo = std::min(lo, rb.min.mean);
    hi = std::max(hi, rb.max.mean);
    defect = std::max(defect, s.hermitian_defect);
  }
  r.pass = violations == 0;
  r.summary = std::to_string(syms.size()) + " grid points, Rayleigh quotients in [" + fmt(lo, 5) + ", " + fmt(hi, 5) +
              "] vs [" + fmt(b.lambda) + ", " + fmt(b.Lambda) + "], violations " + std::to_string(violations);
  r.details = {{"points", syms.size()}, {"min_rayleigh", lo}, {"max_rayleigh", hi}, {"violations", violations},
               {"max_hermitian_defect", defect}};
  art.add("q_direct.csv", symbol_csv(syms));
  return r;
}

inline CriterionResult criterion_4(Context& ctx, Artifacts& art) {
  CriterionResult r{4, "Neumann series vs direct corrector"};
  const auto& direct = crit3_symbols(ctx);
  const TorusGrid g(2, 32);
  const auto ens = sample_ensemble(EnvironmentSpec::bernoulli(kGamma), g, 32, ctx.opt.seed + 3, ctx.opt.threads);
  const double ratio_bound = (1.0 - (1.0 - kGamma) / (1.0 + kGamma)) + 0.05;
  const int m_max = 80;
  int disagree = 0, bad_ratio = 0;
  double worst = 0.0, worst_ratio = 0.0, worst_tail = 0.0;
  std::vector<EffectiveSymbol> rows;
  std::ostringstream ratios;
  ratios << "xi_1,xi_2,eta,fitted_ratio,fitted_terms,tail_bound,max_abs_diff\n";
  for (const auto& d : direct) {
    const auto s = q_via_series(ens, d.xi, d.eta, m_max, ctx.opt.threads);
    double diff = 0.0;
    bool ok = true;
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        const double dd = std::abs(s.symbol.q(j, k) - d.q(j, k));
        const double tol = std::max(1e-6, 3.0 * std::hypot(s.symbol.stderr(j, k), d.stderr(j, k)));
        diff = std::max(diff, dd);
        ok = ok && dd <= tol;
      }
    if (!ok) ++disagree;
    if (!(s.fitted_ratio <= ratio_bound)) ++bad_ratio;
    worst = std::max(worst, diff);
    worst_ratio = std::max(worst_ratio, s.fitted_ratio);
    worst_tail = std::max(worst_tail, s.tail_bound);
    ratios << fmt(d.xi[0], 17) << ',' << fmt(d.xi[1], 17) << ',' << fmt(d.eta, 17) << ',' << fmt(s.fitted_ratio, 17) << ','
           << s.fitted_terms << ',' << fmt(s.tail_bound, 17) << ',' << fmt(diff, 17) << '\n';
    rows.push_back(s.symbol);
  }
  r.pass = disagree == 0 && bad_ratio == 0;
  r.summary = "max |q_series - q_direct| = " + fmt(worst, 3) + " (" + std::to_string(disagree) +
              " points outside tolerance), max fitted ratio " + fmt(worst_ratio, 4) + " <= " + fmt(ratio_bound, 4);
  r.details = {{"max_abs_diff", worst},       {"disagreements", disagree}, {"max_fitted_ratio", worst_ratio},
               {"ratio_bound", ratio_bound},  {"ratio_violations", bad_ratio}, {"terms", m_max},
               {"max_tail_bound", worst_tail}};
  art.add("q_series.csv", symbol_csv(rows));
  art.add("series_ratios.csv", ratios.str());
  return r;
}

inline CriterionResult criterion_5(Context& ctx, Artifacts& art) {
  CriterionResult r{5, "operator contracts"};
  const TorusGrid g(2, 16);
  const double Lambda = 1.5;
  const std::vector<std::pair<std::vector<double>, double>> pts = {
      {{0.0, 0.0}, 1e-3}, {{0.0, 0.0}, 1.0},    {{0.3, -0.2}, 1e-2}, {{std::numbers::pi, 0.0}, 0.1},
      {{-1.1, 2.5}, 1e-4}, {{0.05, 0.05}, 1e-6}, {{2.0, 2.0}, 10.0},  {{-0.7, 0.0}, 0.5},
      {{1e-3, -1e-3}, 1e-3}, {{3.0, -3.0}, 1e-2}};
  auto rng = CounterRng(ctx.opt.seed).substream(stream_tag::kTestData);
  int violations = 0;
  double worst_ratio = 0.0, worst_r2 = 0.0;
  std::ostringstream log;
  for (const auto& [xi, eta] : pts) {
    const FourierPoint p(xi);
    for (int t = 0; t < 10; ++t) {
      ComplexField f(g, 2);
      for (auto& v : f.data()) v = {rng.next_normal(), rng.next_normal()};
      const double ratio = norm2(apply_T(f, p, eta, Lambda)) / norm2(f);
      worst_ratio = std::max(worst_ratio, ratio);
      if (ratio > 1.0) ++violations;
    }
    Eigen::VectorXcd v(2);
    v << cplx(rng.next_normal(), rng.next_normal()), cplx(rng.next_normal(), rng.next_normal());
    ComplexField c(g, 2);
    for (int j = 0; j < 2; ++j)
      for (auto& x : c.component(j)) x = v(j);
    const auto Tc = apply_T(c, p, eta, Lambda);
    const auto ref = oracle::constant_input_T(xi, eta, Lambda, v);
    double err = 0.0;
    for (std::size_t x = 0; x < g.size(); ++x)
      for (int j = 0; j < 2; ++j) err = std::max(err, std::abs(Tc(j, x) - ref(j)));
    err /= std::max(1.0, ref.norm());
    worst_r2 = std::max(worst_r2, err);
    log << "xi=(" << xi[0] << ',' << xi[1] << ") eta=" << eta << " constant_input_err=" << fmt(err, 3) << '\n';
  }
  r.pass = violations == 0 && worst_r2 <= 1e-12;
  r.summary = "100 draws: max ||Tg||/||g|| = " + fmt(worst_ratio, 6) + " (" + std::to_string(violations) +
              " violations); constant-input error " + fmt(worst_r2, 3);
  r.details = {{"max_norm_ratio", worst_ratio}, {"violations", violations}, {"constant_input_error", worst_r2}};
  art.add("log.txt", log.str());
  return r;
}

/// Averaged Green's function of the criterion 6/7 setup at eta.
inline const GreensTable& crit67_green(Context& ctx, double eta) {
  const std::string key = fmt(eta, 17);
  if (auto it = ctx.green.find(key); it != ctx.green.end()) return it->second;
  const auto env = EnvironmentSpec::bernoulli(kGamma);
  const TorusGrid g(2, 64);
  if (ctx.green_ensemble.empty()) ctx.green_ensemble = sample_ensemble(env, g, 100, ctx.opt.seed + 6, ctx.opt.threads);
  GreenEstimator est;
  est.sources_per_sample = ctx.opt.green_sources;
  est.control_mean = env.mean_coefficient(2);
  est.control_covariance = env.coefficient_covariance(2);
  auto t = averaged_green(ctx.green_ensemble, eta, {}, est, ctx.opt.seed + 6, ctx.opt.threads);
  t.per_sample.clear();
  t.per_sample.shrink_to_fit();
  return ctx.green.emplace(key, std::move(t)).first->second;
}

inline std::string table_csv(const GreensTable& t) {
  std::ostringstream os;
  write_table_csv(os, t);
  return os.str();
}

inline CriterionResult criterion_6(Context& ctx, Artifacts& art) {
  CriterionResult r{6, "averaged Green's function sanity"};
  const auto& t = crit67_green(ctx, 0.1);
  const auto& g = t.grid();
  double worst_pos = INFINITY, worst_flip = 0.0;
  int pos_fail = 0, flip_fail = 0;
  for (std::size_t x = 0; x < g.size(); ++x) {
    const double se = t.stderr[x];
    worst_pos = std::min(worst_pos, (t.values[x] + 3.0 * se));
    if (t.values[x] < -3.0 * se) ++pos_fail;
    auto c = g.centered(x);
    for (auto& v : c) v = -v;
    const auto y = g.index(c);
    const double z = std::abs(t.values[x] - t.values[y]) / std::hypot(se, t.stderr[y]);
    worst_flip = std::max(worst_flip, std::isfinite(z) ? z : 0.0);
    if (std::abs(t.values[x] - t.values[y]) > 3.0 * std::hypot(se, t.stderr[y])) ++flip_fail;
  }
  r.pass = pos_fail == 0 && flip_fail == 0 && t.failed_samples == 0;
  r.summary = "100 samples x " + std::to_string(ctx.opt.green_sources) + " sources: min(G + 3se) = " + fmt(worst_pos, 3) +
              ", max flip z = " + fmt(worst_flip, 3) + ", failures pos " + std::to_string(pos_fail) + " flip " +
              std::to_string(flip_fail);
  r.details = {{"min_value_plus_3se", worst_pos}, {"positivity_failures", pos_fail}, {"max_flip_z", worst_flip},
               {"flip_failures", flip_fail},      {"failed_samples", t.failed_samples}, {"n_samples", t.n_samples}};
  art.add("green_eta0.1.csv", table_csv(t));
  return r;
}

/// X >= Y within joint CI: p_X - p_Y >= -1.96 sqrt(s_X^2 + s_Y^2), s from the 95% bootstrap CI half-widths.
inline bool ordered_within_ci(const DecayFitReport& x, const DecayFitReport& y) {
  const double sx = (x.p_ci_high - x.p_ci_low) / (2.0 * 1.959964);
  const double sy = (y.p_ci_high - y.p_ci_low) / (2.0 * 1.959964);
  return x.p_hat - y.p_hat >= -1.959964 * std::hypot(sx, sy);
}

inline CriterionResult criterion_7(Context& ctx, Artifacts& art) {
  CriterionResult r{7, "decay-exponent ladder"};
  const std::vector<double> etas = {0.05, 0.1, 0.2};
  std::vector<const GreensTable*> avg;
  for (double e : etas) avg.push_back(&crit67_green(ctx, e));
  const auto ex = extrapolate_q00(ctx.green_ensemble, {4e-3, 2e-3, 1e-3}, {}, ctx.opt.threads);
  std::vector<DifferenceTables> diffs;
  for (std::size_t i = 0; i < etas.size(); ++i) {
    const auto hom = homogenized_green(ex.symbol, etas[i], avg[i]->grid());
    diffs.push_back(difference_tables(*avg[i], hom));
    art.add("difference_eta" + fmt(etas[i]) + ".csv", table_csv(diffs.back().value));
    art.add("gradient_difference_eta" + fmt(etas[i]) + ".csv", table_csv(diffs.back().gradient));
    art.add("second_difference_eta" + fmt(etas[i]) + ".csv", table_csv(diffs.back().second));
  }
  DecayFitOptions fo;
  fo.Lambda = 1.0 + kGamma;
  fo.seed = ctx.opt.seed + 7;
  std::map<DecayClaim, DecayFitReport> fits;
  for (auto claim : {DecayClaim::J1, DecayClaim::K1, DecayClaim::M1}) {
    std::vector<const GreensTable*> ts;
    for (const auto& d : diffs)
      ts.push_back(claim == DecayClaim::J1 ? &d.value : claim == DecayClaim::K1 ? &d.gradient : &d.second);
    fits.emplace(claim, decay_fit(ts, claim, fo));
    art.add_json(std::string("fit_") + to_string(claim) + ".json", fits.at(claim).to_json());
  }
  const auto& J = fits.at(DecayClaim::J1);
  const auto& K = fits.at(DecayClaim::K1);
  const auto& M = fits.at(DecayClaim::M1);
  const bool signal = !J.insufficient_signal && !K.insufficient_signal && !M.insufficient_signal;
  const bool mk = signal && ordered_within_ci(M, K);
  const bool kj = signal && ordered_within_ci(K, J);
  const bool alpha = signal && J.alpha_ci_low > 0.0;
  r.pass = mk && kj && alpha;
  auto show = [](const DecayFitReport& f) {
    return f.insufficient_signal ? std::string("insufficient signal")
                                 : fmt(f.p_hat, 3) + " [" + fmt(f.p_ci_low, 3) + ", " + fmt(f.p_ci_high, 3) + "]";
  };
  r.summary = "p_J1 " + show(J) + ", p_K1 " + show(K) + ", p_M1 " + show(M) + "; alpha_J1 CI low " +
              fmt(J.alpha_ci_low, 3);
  r.details = {{"J1", J.to_json()},     {"K1", K.to_json()}, {"M1", M.to_json()}, {"M_ge_K", mk}, {"K_ge_J", kj},
               {"alpha_J1_positive", alpha}, {"q00", {ex.symbol.q(0, 0).real(), ex.symbol.q(0, 1).real(), ex.symbol.q(1, 1).real()}}};
  return r;
}

inline CriterionResult criterion_8(Context& ctx, Artifacts& art) {
  CriterionResult r{8, "Gaussian field oracle"};
  const TorusGrid g(2, 32);
  const double mass = 0.5;
  const auto V = GradientPotential::quadratic();
  const McmcControls mc;
  const int n = 200;
  std::vector<RealField> phis(static_cast<std::size_t>(n), RealField(g, 1));
  std::vector<McmcDiagnostics> diag(static_cast<std::size_t>(n));
  parallel_for(phis.size(), ctx.opt.threads, [&](std::size_t i) {
    auto s = sample_massive_field(g, V, mass, mc, ctx.opt.seed + 8, i);
    phis[i] = std::move(*s.phi);
    diag[i] = s.diagnostics;
  });
  const auto kernel = oracle::massive_kernel(g, mass);
  const std::vector<std::vector<int>> offsets = {{0, 0}, {1, 0}, {0, 1}, {2, 0}, {0, 2}};
  int cov_fail = 0;
  nlohmann::json cov = nlohmann::json::array();
  std::ostringstream csv;
  csv << "x_1,x_2,estimate,stderr,oracle\n";
  for (const auto& off : offsets) {
    const auto dx = g.index(off);
    std::vector<double> per;
    for (const auto& p : phis) {
      double s = 0.0;
      for (std::size_t y = 0; y < g.size(); ++y) s += p[y] * p[g.add(y, dx)];
      per.push_back(s / static_cast<double>(g.size()));
    }
    const auto m = mean_stderr(per);
    const double ref = kernel(static_cast<Eigen::Index>(dx));
    const bool ok = std::abs(m.mean - ref) <= 3.0 * m.stderr;
    if (!ok) ++cov_fail;
    cov.push_back({{"x", off}, {"estimate", m.mean}, {"stderr", m.stderr}, {"oracle", ref}, {"ok", ok}});
    csv << off[0] << ',' << off[1] << ',' << fmt(m.mean, 17) << ',' << fmt(m.stderr, 17) << ',' << fmt(ref, 17) << '\n';
  }
  // Brascamp-Lieb moment bound for fixed test functions.
  std::vector<Eigen::VectorXd> fs(5, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size())));
  fs[0](0) = 1.0;
  fs[1](0) = 1.0;
  fs[1](static_cast<Eigen::Index>(g.index({1, 0}))) = -1.0;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b) fs[2](static_cast<Eigen::Index>(g.index({a, b}))) = 0.5;
  for (std::size_t x = 0; x < g.size(); ++x) {
    const auto c = g.coords(x);
    fs[3](static_cast<Eigen::Index>(x)) = 0.2 * std::cos(2.0 * std::numbers::pi * c[0] / g.side());
    fs[4](static_cast<Eigen::Index>(x)) = 0.3 * std::exp(-0.5 * (std::pow(g.centered(x)[0], 2) + std::pow(g.centered(x)[1], 2)) / 4.0);
  }
  int bl_fail = 0;
  nlohmann::json bl = nlohmann::json::array();
  const double lambda = V.curvature_bounds().lambda;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    std::vector<double> e;
    for (const auto& p : phis) {
      double s = 0.0;
      for (std::size_t x = 0; x < g.size(); ++x) s += fs[k](static_cast<Eigen::Index>(x)) * p[x];
      e.push_back(std::exp(s));
    }
    const auto m = mean_stderr(e);
    const double bound = std::exp(0.5 * oracle::massive_quadratic_form(g, lambda, mass, fs[k]));
    const bool ok = m.mean - 3.0 * m.stderr <= bound;
    if (!ok) ++bl_fail;
    bl.push_back({{"f", k}, {"moment", m.mean}, {"stderr", m.stderr}, {"bound", bound}, {"ok", ok}});
  }
  int nonconv = 0;
  double acc = 0.0;
  for (const auto& d : diag) {
    nonconv += d.converged ? 0 : 1;
    acc += d.acceptance_rate / n;
  }
  r.pass = cov_fail == 0 && bl_fail == 0;
  r.summary = "covariance at 5 offsets: " + std::to_string(cov_fail) + " outside 3se; BL bound: " +
              std::to_string(bl_fail) + " of 5 violated; mean acceptance " + fmt(acc, 3) + ", non-stationary chains " +
              std::to_string(nonconv);
  r.details = {{"covariance", cov}, {"bl", bl}, {"mean_acceptance", acc}, {"nonstationary_chains", nonconv}};
  art.add("covariance.csv", csv.str());
  art.add_json("bl.json", bl);
  return r;
}

inline CriterionResult criterion_9(Context& ctx, Artifacts& art) {
  CriterionResult r{9, "massless d=1 exactness"};
  const TorusGrid g(1, 100);
  const auto V = GradientPotential::quadratic();
  const auto map = GradientCoefficientMap::diag_tanh(1, 1.0, 0.5);
  const int n = 100;
  std::vector<double> w;
  double worst_violation = 0.0;
  std::vector<FieldSample> samples(static_cast<std::size_t>(n));
  parallel_for(samples.size(), ctx.opt.threads,
               [&](std::size_t i) { samples[i] = sample_massless_gradient(g, V, {}, ctx.opt.seed + 9, i); });
  for (const auto& s : samples) {
    for (double v : s.omega->component(0)) w.push_back(v);
    const auto a = coeff_from_gradient(s, map, map.bounds);
    worst_violation = std::max(worst_violation, a.max_violation());
  }
  const double N = static_cast<double>(w.size());
  double m1 = 0.0, m2 = 0.0, m4 = 0.0;
  for (double v : w) m1 += v / N;
  for (double v : w) {
    m2 += (v - m1) * (v - m1) / (N - 1.0);
    m4 += std::pow(v - m1, 4) / N;
  }
  const double se = std::sqrt((m4 - m2 * m2) / N);
  r.pass = std::abs(m2 - 1.0) <= 3.0 * se && worst_violation == 0.0;
  r.summary = std::to_string(w.size()) + " draws: var = " + fmt(m2, 5) + " +- " + fmt(se, 2) +
              "; worst ellipticity violation " + fmt(worst_violation, 3);
  r.details = {{"draws", w.size()}, {"variance", m2}, {"stderr", se}, {"max_violation", worst_violation}};
  std::ostringstream os;
  for (double v : w) os << fmt(v, 17) << '\n';
  art.add("omega.txt", os.str());
  return r;
}

inline CriterionResult criterion_10(Context& ctx, Artifacts& art) {
  CriterionResult r{10, "Hoelder scan"};
  std::vector<std::vector<double>> xg;
  std::vector<double> eg;
  for (int k = 0; k < 8; ++k) {
    xg.push_back({0.1 * k});
    eg.push_back(0.002 + 0.004 * k);
  }
  const SymbolEvaluator synthetic = [](const FourierPoint& xi, double) {
    return std::vector<Eigen::MatrixXcd>(4, Eigen::MatrixXcd::Identity(1, 1) * std::sqrt(xi.norm()));
  };
  const auto syn = holder_scan(synthetic, xg, eg, 1.0, ctx.opt.threads);

  const TorusGrid g(1, 256);
  const auto ens = sample_ensemble(EnvironmentSpec::bernoulli(kGamma), g, 32, ctx.opt.seed + 10, ctx.opt.threads);
  const SymbolEvaluator exact = [&ens](const FourierPoint& xi, double eta) {
    std::vector<Eigen::MatrixXcd> out;
    for (const auto& a : ens) out.push_back(oracle::corrector_q(a, xi.values(), eta));
    return out;
  };
  const double Lambda = 1.0 + kGamma;
  const auto scan = holder_scan(exact, xg, eg, Lambda, ctx.opt.threads);
  bool any = false, positive = true;
  double ci_low = INFINITY;
  for (const auto* f : {&scan.xi_fit, &scan.eta_fit})
    if (!f->degenerate) {
      any = true;
      positive = positive && f->ci_low > 0.0;
      ci_low = std::min(ci_low, f->ci_low);
    }
  const bool syn_ok = !syn.degenerate && std::abs(syn.alpha - 0.5) <= 0.05;
  r.pass = syn_ok && any && positive && !scan.insufficient_signal;
  r.summary = "synthetic alpha = " + fmt(syn.alpha, 4) + "; Bernoulli d=1 alpha = " + fmt(scan.alpha, 4) +
              " (raw xi " + (scan.xi_fit.degenerate ? std::string("flat") : fmt(scan.alpha_raw_xi, 3)) + ", raw eta " +
              fmt(scan.alpha_raw_eta, 3) + ", CI low " + fmt(ci_low, 3) + ")";
  r.details = {{"synthetic", syn.to_json()}, {"bernoulli", scan.to_json()}};
  art.add_json("synthetic.json", syn.to_json());
  art.add_json("bernoulli_d1.json", scan.to_json());
  return r;
}

inline CriterionResult criterion_11(Context&, Artifacts& art) {
  CriterionResult r{11, "cutoff construction"};
  const TorusGrid g(2, 128);
  bool mass_ok = true;
  nlohmann::json rows = nlohmann::json::array();
  for (double Lc : {4.0, 8.0, 16.0, 32.0}) {
    const auto k = cutoff_kernel(g, {Lc});
    const bool ok = k.mass_defect <= 5.0 / Lc;
    mass_ok = mass_ok && ok;
    rows.push_back({{"L_cut", Lc}, {"mass_defect", k.mass_defect}, {"bound", 5.0 / Lc}, {"spectral_constant", k.spectral_constant}});
  }
  GreensTable t(GreensKind::averaged, 0.1, constant_coeff_green(0.1, g));
  using exact = boost::multiprecision::cpp_rational;
  std::size_t mismatched = 0, inexact = 0;
  for (double Lc : {4.0, 8.0, 16.0, 32.0}) {
    const auto s = cutoff_smooth(t, {Lc});
    inexact += s.inexact_sites;
    for (std::size_t i = 0; i < t.values.data().size(); ++i)
      if (exact(s.smoothed.values.data()[i]) + exact(s.remainder.values.data()[i]) + exact(s.remainder_low.data()[i]) !=
          exact(t.values.data()[i]))
        ++mismatched;
  }
  r.pass = mass_ok && mismatched == 0 && inexact == 0;
  r.summary = "mass defects " + std::string(mass_ok ? "within" : "outside") + " 5/L_cut; split mismatches " +
              std::to_string(mismatched);
  r.details = {{"kernels", rows}, {"split_mismatches", mismatched}, {"inexact_sites", inexact}};
  art.add_json("cutoff.json", r.details);
  return r;
}

// ---------------------------------------------------------------------------

using CriterionFn = CriterionResult (*)(Context&, Artifacts&);

inline const std::vector<CriterionFn>& criterion_table() {
  static const std::vector<CriterionFn> t = {criterion_1, criterion_2, criterion_3, criterion_4,  criterion_5, criterion_6,
                                             criterion_7, criterion_8, criterion_9, criterion_10, criterion_11};
  return t;
}

inline CriterionResult run_one(int id, Context& ctx) {
  Artifacts art;
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r;
  try {
    r = criterion_table().at(static_cast<std::size_t>(id - 1))(ctx, art);
  } catch (const std::exception& e) {
    r.id = id;
    r.pass = false;
    r.summary = std::string("error: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.digest = art.digest();
  if (!ctx.opt.artifacts.empty()) art.save(ctx.opt.artifacts / ("criterion_" + std::to_string(id)));
  return r;
}

using Reporter = std::function<void(const CriterionResult&)>;

/// Runs the selected criteria (ids 1..12). Criterion 12 reruns 1..11 in a fresh
/// context with a different thread count and compares digests.
inline std::vector<CriterionResult> run_suite(const std::vector<int>& ids, const SuiteOptions& opt,
                                              const Reporter& report = {}) {
  std::vector<CriterionResult> out;
  Context ctx{opt};
  std::map<int, std::uint64_t> digests;
  for (int id : ids) {
    if (id == 12) continue;
    if (id < 1 || id > 12) throw InvalidArgument("unknown criterion " + std::to_string(id));
    out.push_back(run_one(id, ctx));
    digests[id] = out.back().digest;
    if (report) report(out.back());
  }
  if (std::find(ids.begin(), ids.end(), 12) != ids.end()) {
    const auto t0 = std::chrono::steady_clock::now();
    SuiteOptions o2 = opt;
    o2.threads = opt.rerun_threads > 0 ? opt.rerun_threads : opt.threads + 3;
    o2.artifacts.clear();
    Context ctx2{o2};
    Context ctx1{opt};
    int mismatches = 0;
    nlohmann::json rows = nlohmann::json::array();
    for (int id = 1; id <= 11; ++id) {
      std::uint64_t first;
      if (auto it = digests.find(id); it != digests.end()) first = it->second;
      else first = run_one(id, ctx1).digest;
      const auto again = run_one(id, ctx2).digest;
      if (first != again) ++mismatches;
      rows.push_back({{"criterion", id}, {"digest_first", first}, {"digest_rerun", again}});
    }
    CriterionResult r{12, "reproducibility"};
    r.pass = mismatches == 0;
    r.summary = "criteria 1-11 rerun at " + std::to_string(o2.threads) + " threads (first run " +
                std::to_string(opt.threads) + "): " + std::to_string(mismatches) + " digest mismatches";
    r.details = {{"rerun_threads", o2.threads}, {"digests", rows}};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.digest = fnv1a64(rows.dump());
    out.push_back(r);
    if (report) report(out.back());
  }
  return out;
}

}  // namespace hlab::verify
