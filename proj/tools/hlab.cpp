// hlab: command-line front end.
//
//   hlab env      --config C   coefficient-field samples + sidecar JSON
//   hlab qmatrix  --config C   q(xi, eta) table, q(0,0) extrapolation, Hoelder scan
//   hlab green    --config C   Green's function tables and decay fits
//   hlab verify   --config C   acceptance suite
//
// Exit codes: 0 ok, 1 a check failed, 2 configuration error, 3 runtime error.
// Progress goes to stderr as one JSON object per line; data goes to files.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hlab/hlab.hpp"
#include "hlab/verification/criteria.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hlab;

namespace {

const auto t_start = std::chrono::steady_clock::now();

void log_event(const std::string& level, const std::string& event, json fields = json::object()) {
  fields["level"] = level;
  fields["event"] = event;
  fields["t"] = std::round(std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() * 1e3) / 1e3;
  std::cerr << fields.dump() << '\n';
}

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%g", v);
  return b;
}

std::string index_name(std::size_t i, const char* ext) {
  char b[32];
  std::snprintf(b, sizeof b, "sample_%04zu.%s", i, ext);
  return b;
}

void write_text(const fs::path& p, const std::string& body) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << body;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(1) + "\n"); }

json provenance_json(const ExperimentConfig& c) {
  char h[20];
  std::snprintf(h, sizeof h, "%016llx", static_cast<unsigned long long>(c.hash));
  return {{"seed", c.seed}, {"config_hash", h}};
}

std::string csv_banner(const ExperimentConfig& c, const std::string& what, int side) {
  return "# hlab " + what + " seed=" + std::to_string(c.seed) + " config_hash=" + std::to_string(c.hash) +
         " side=" + std::to_string(side) + "\n";
}

std::vector<int> sides(const ExperimentConfig& c) {
  if (c.double_L) return {c.side, 2 * c.side};
  return {c.side};
}

fs::path side_dir(const ExperimentConfig& c, const std::string& cmd, int side) {
  return fs::path(c.out) / cmd / ("L" + std::to_string(side));
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

json symbol_json(const EffectiveSymbol& s) {
  return {{"xi", s.xi.values()},        {"eta", s.eta},
          {"re_q", matrix_json(s.q.real())}, {"im_q", matrix_json(s.q.imag())},
          {"stderr", matrix_json(s.stderr)}, {"n_samples", s.n_samples},
          {"max_residual", s.max_residual}};
}

// ---------------------------------------------------------------------------

int cmd_env(const ExperimentConfig& c) {
  for (int L : sides(c)) {
    const TorusGrid grid(c.dim, L);
    const auto dir = side_dir(c, "env", L);
    fs::create_directories(dir);
    std::vector<std::optional<EnvironmentSample>> samples(static_cast<std::size_t>(c.env_cmd.samples));
    parallel_for(samples.size(), c.threads,
                 [&](std::size_t i) { samples[i] = sample_environment(c.environment, grid, c.seed, i); });
    json summary = {{"provenance", provenance_json(c)}, {"kind", c.environment.kind()}, {"dim", c.dim}, {"side", L}};
    double worst = 0.0;
    json files = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = *samples[i];
      save_field((dir / index_name(i, "hlab")).string(), s.field.a, "coef", {c.seed, c.hash});
      Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(c.dim, c.dim);
      for (std::size_t x = 0; x < grid.size(); ++x) avg += s.field.at(x);
      avg /= static_cast<double>(grid.size());
      const double v = s.field.max_violation();
      worst = std::max(worst, v);
      json side = {{"provenance", provenance_json(c)},
                   {"index", i},
                   {"kind", s.field.kind},
                   {"bounds", {{"lambda", s.field.bounds.lambda}, {"Lambda", s.field.bounds.Lambda}}},
                   {"max_violation", v},
                   {"site_average", matrix_json(avg)}};
      if (s.diagnostics)
        side["mcmc"] = {{"acceptance_rate", s.diagnostics->acceptance_rate}, {"step", s.diagnostics->step},
                        {"steps", s.diagnostics->steps},  {"stationarity_z", s.diagnostics->stationarity_z},
                        {"converged", s.diagnostics->converged}};
      write_json(dir / index_name(i, "json"), side);
      files.push_back(index_name(i, "hlab"));
    }
    summary["samples"] = files;
    summary["max_violation"] = worst;
    write_json(dir / "summary.json", summary);
    log_event("info", "env.done", {{"side", L}, {"samples", samples.size()}, {"dir", dir.string()}});
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_qmatrix(const ExperimentConfig& c) {
  const auto& Q = c.qmatrix;
  std::vector<std::vector<EffectiveSymbol>> per_side;
  for (int L : sides(c)) {
    const TorusGrid grid(c.dim, L);
    const auto dir = side_dir(c, "qmatrix", L);
    fs::create_directories(dir);
    const auto ens = sample_ensemble(c.environment, grid, Q.samples, c.seed, c.threads);
    log_event("info", "qmatrix.ensemble", {{"side", L}, {"samples", ens.size()}});

    auto xis = Q.xi;
    if (xis.empty()) xis.push_back(std::vector<double>(static_cast<std::size_t>(c.dim), 0.0));
    std::vector<EffectiveSymbol> rows;
    std::ostringstream csv, series;
    csv << csv_banner(c, "qmatrix", L);
    write_symbol_csv_header(csv, c.dim);
    const double ratio_bound = 1.0 - c.environment.bounds().lambda / c.environment.bounds().Lambda + 0.05;
    series << csv_banner(c, "qmatrix-series", L);
    for (int j = 1; j <= c.dim; ++j) series << "xi_" << j << ',';
    series << "eta,max_abs_diff,tolerance,agree,fitted_ratio,ratio_bound,tail_bound\n";
    int disagreements = 0;
    for (const auto& xi : xis)
      for (double eta : Q.eta) {
        auto s = q_of_xi_eta(ens, FourierPoint(xi), eta, c.solver, c.threads);
        write_symbol_csv_row(csv, s);
        if (Q.series_terms > 0) {
          const auto sr = q_via_series(ens, FourierPoint(xi), eta, Q.series_terms, c.threads);
          double diff = 0.0, tol = 1e-6;
          bool ok = true;
          for (int j = 0; j < c.dim; ++j)
            for (int k = 0; k < c.dim; ++k) {
              const double dd = std::abs(sr.symbol.q(j, k) - s.q(j, k));
              const double t = std::max(1e-6, 3.0 * std::hypot(sr.symbol.stderr(j, k), s.stderr(j, k)));
              diff = std::max(diff, dd);
              tol = std::max(tol, t);
              ok = ok && dd <= t;
            }
          disagreements += ok ? 0 : 1;
          for (double v : xi) series << detail::fmt_double(v) << ',';
          series << detail::fmt_double(eta) << ',' << detail::fmt_double(diff) << ',' << detail::fmt_double(tol) << ','
                 << (ok ? 1 : 0) << ',' << detail::fmt_double(sr.fitted_ratio) << ',' << detail::fmt_double(ratio_bound)
                 << ',' << detail::fmt_double(sr.tail_bound) << '\n';
        }
        s.per_sample.clear();
        rows.push_back(std::move(s));
      }
    json q00j;
    if (!Q.q00_ladder.empty()) {
      const auto ex = extrapolate_q00(ens, Q.q00_ladder, c.solver, c.threads);
      EffectiveSymbol row = ex.symbol;
      for (int j = 0; j < c.dim; ++j)
        for (int k = 0; k < c.dim; ++k) row.stderr(j, k) = ex.uncertainty(j, k);
      write_symbol_csv_row(csv, row);
      json ladder = json::array();
      for (const auto& s : ex.ladder) ladder.push_back(symbol_json(s));
      q00j = {{"provenance", provenance_json(c)},    {"side", L},
              {"q00", symbol_json(ex.symbol)},       {"extrapolation_spread", matrix_json(ex.spread)},
              {"uncertainty", matrix_json(row.stderr)}, {"non_monotone", ex.non_monotone},
              {"ladder", ladder}};
      write_json(dir / "q00.json", q00j);
      if (ex.non_monotone) log_event("warn", "qmatrix.q00_non_monotone", {{"side", L}});
    }
    write_text(dir / "q.csv", csv.str());
    if (Q.series_terms > 0) {
      write_text(dir / "series.csv", series.str());
      log_event(disagreements ? "warn" : "info", "qmatrix.series", {{"side", L}, {"disagreements", disagreements}});
    }
    if (!Q.holder_xi.empty()) {
      auto scan = holder_scan(ensemble_evaluator(ens, c.solver), Q.holder_xi, Q.holder_eta,
                              c.environment.bounds().Lambda, c.threads);
      auto j = scan.to_json();
      j["provenance"] = provenance_json(c);
      write_json(dir / "holder.json", j);
      log_event("info", "qmatrix.holder", {{"side", L}, {"alpha", scan.alpha}, {"degenerate", scan.degenerate}});
    }
    per_side.push_back(std::move(rows));
    log_event("info", "qmatrix.done", {{"side", L}, {"dir", dir.string()}});
  }
  if (per_side.size() == 2) {
    json drift = json::array();
    for (std::size_t i = 0; i < per_side[0].size(); ++i)
      drift.push_back({{"xi", per_side[0][i].xi.values()},
                       {"eta", per_side[0][i].eta},
                       {"max_abs_drift", (per_side[0][i].q - per_side[1][i].q).cwiseAbs().maxCoeff()}});
    write_json(fs::path(c.out) / "qmatrix" / "doubling_drift.json",
               {{"provenance", provenance_json(c)}, {"sides", sides(c)}, {"points", drift}});
  }
  return 0;
}

// ---------------------------------------------------------------------------

/// Averaged Green's function with per-sample results cached on disk.
GreensTable cached_average(const ExperimentConfig& c, const std::vector<CoefficientField>& ens, double eta,
                           const fs::path& cache_dir) {
  const auto& G = c.green;
  const auto& grid = ens.front().grid();
  std::optional<Eigen::MatrixXd> mean, cov;
  if (G.control_variate) {
    mean = c.environment.mean_coefficient(c.dim);
    if (mean) cov = c.environment.coefficient_covariance(c.dim);
  }
  if (G.cache) fs::create_directories(cache_dir);
  std::vector<std::optional<RealField>> slots(ens.size());
  std::vector<char> hit(ens.size(), 0);
  if (G.cache)
    for (std::size_t i = 0; i < ens.size(); ++i) {
      const auto p = cache_dir / index_name(i, "hlab");
      if (!fs::exists(p)) continue;
      auto f = load_field(p.string());
      if (f.header.provenance.seed != c.seed || f.header.provenance.config_hash != c.hash || !(f.values.grid() == grid) ||
          f.header.components != 1)
        throw IntegrityError("cache file " + p.string() + " belongs to a different run (seed, config or grid differ)");
      slots[i] = f.real();
      hit[i] = 1;
    }
  parallel_for(ens.size(), c.threads, [&](std::size_t i) {
    if (hit[i]) return;
    const auto src = green_sources(grid, c.seed, ens[i].sample_index, G.sources);
    try {
      slots[i] = sample_green(ens[i], eta, src, c.solver, mean, cov);
    } catch (const ConvergenceError&) {
      slots[i].reset();
    }
    if (G.cache && slots[i]) save_field((cache_dir / index_name(i, "hlab")).string(), *slots[i], "green", {c.seed, c.hash});
  });
  GreensTable t(GreensKind::averaged, eta, RealField(grid, 1));
  for (auto& s : slots) {
    if (s) t.per_sample.push_back(std::move(*s));
    else ++t.failed_samples;
  }
  if (t.per_sample.empty()) throw ConvergenceError("green: every sample failed", 0.0, 0);
  t.n_samples = static_cast<int>(t.per_sample.size());
  detail::mean_and_stderr(t.per_sample, t.values, t.stderr);
  const auto hits = std::count(hit.begin(), hit.end(), 1);
  log_event("info", "green.table", {{"side", grid.side()}, {"eta", eta}, {"cached", hits},
                                    {"computed", static_cast<long>(ens.size()) - hits}, {"failed", t.failed_samples}});
  return t;
}

std::string table_csv(const ExperimentConfig& c, const GreensTable& t) {
  std::ostringstream os;
  write_table_csv(os, t, {c.seed, c.hash});
  return os.str();
}

int cmd_green(const ExperimentConfig& c) {
  const auto& G = c.green;
  std::vector<std::vector<GreensTable>> per_side;
  for (int L : sides(c)) {
    const TorusGrid grid(c.dim, L);
    const auto dir = side_dir(c, "green", L);
    fs::create_directories(dir);
    const auto ens = sample_ensemble(c.environment, grid, G.samples, c.seed, c.threads);
    std::vector<double> ladder = c.qmatrix.q00_ladder;
    if (ladder.empty()) ladder = QmatrixConfig{}.q00_ladder;
    const auto ex = extrapolate_q00(ens, ladder, c.solver, c.threads);
    write_json(dir / "q00.json", {{"provenance", provenance_json(c)}, {"q00", symbol_json(ex.symbol)},
                                  {"uncertainty", matrix_json(ex.spread.cwiseMax(ex.symbol.stderr))}});

    std::vector<GreensTable> avgs;
    std::vector<DifferenceTables> diffs, own;
    for (double eta : G.eta) {
      auto avg = cached_average(c, ens, eta, dir / "cache" / ("eta" + num(eta)));
      const auto hom = homogenized_green(ex.symbol, eta, grid);
      diffs.push_back(difference_tables(avg, hom));
      own.push_back(difference_tables(avg, GreensTable(GreensKind::homogenized, eta, RealField(grid, 1))));
      const std::string tag = "_eta" + num(eta) + ".csv";
      write_text(dir / ("averaged" + tag), table_csv(c, avg));
      write_text(dir / ("homogenized" + tag), table_csv(c, hom));
      write_text(dir / ("difference" + tag), table_csv(c, diffs.back().value));
      write_text(dir / ("gradient_difference" + tag), table_csv(c, diffs.back().gradient));
      write_text(dir / ("second_difference" + tag), table_csv(c, diffs.back().second));
      if (hom.doubling_drift)
        log_event("info", "green.homogenized_drift", {{"side", L}, {"eta", eta}, {"drift", *hom.doubling_drift}});
      if (G.cutoff_scale > 0.0) {
        const auto split = cutoff_smooth(diffs.back().value, {G.cutoff_scale});
        write_text(dir / ("smoothed" + tag), table_csv(c, split.smoothed));
        write_text(dir / ("remainder" + tag), table_csv(c, split.remainder));
        std::ostringstream low;
        write_field_csv(low, split.remainder_low, "remainder_low", {c.seed, c.hash});
        write_text(dir / ("remainder_low" + tag), low.str());
        write_json(dir / ("cutoff" + tag.substr(0, tag.size() - 4) + ".json"),
                   {{"provenance", provenance_json(c)},
                    {"L_cut", G.cutoff_scale},
                    {"mass_defect", split.kernel.mass_defect},
                    {"spectral_constant", split.kernel.spectral_constant},
                    {"inexact_sites", split.inexact_sites}});
      }
      avg.per_sample.clear();
      avgs.push_back(std::move(avg));
    }

    DecayFitOptions fo;
    fo.Lambda = c.environment.bounds().Lambda;
    fo.bootstrap = G.bootstrap;
    fo.seed = c.seed;
    for (auto claim : G.claims) {
      std::vector<const GreensTable*> ts;
      for (std::size_t e = 0; e < G.eta.size(); ++e) {
        switch (claim) {
          case DecayClaim::J1: ts.push_back(&diffs[e].value); break;
          case DecayClaim::K1: ts.push_back(&diffs[e].gradient); break;
          case DecayClaim::M1: ts.push_back(&diffs[e].second); break;
          case DecayClaim::A3: ts.push_back(&own[e].value); break;
          case DecayClaim::B3: ts.push_back(&own[e].gradient); break;
        }
      }
      const auto rep = decay_fit(ts, claim, fo);
      auto j = rep.to_json();
      j["provenance"] = provenance_json(c);
      write_json(dir / (std::string("fit_") + to_string(claim) + ".json"), j);
      log_event(rep.insufficient_signal ? "warn" : "info", "green.fit",
                {{"side", L}, {"claim", to_string(claim)}, {"p_hat", rep.p_hat}, {"p_ci", {rep.p_ci_low, rep.p_ci_high}},
                 {"insufficient_signal", rep.insufficient_signal}});
    }
    per_side.push_back(std::move(avgs));
  }
  if (per_side.size() == 2) {
    // Averaged tables at L and 2L compared on |x|_inf <= L/4.
    json drift = json::array();
    for (std::size_t e = 0; e < G.eta.size(); ++e) {
      const auto& a = per_side[0][e];
      const auto& b = per_side[1][e];
      double worst = 0.0;
      for (std::size_t x = 0; x < a.grid().size(); ++x) {
        const auto cx = a.grid().centered(x);
        bool inside = true;
        for (int v : cx) inside = inside && std::abs(v) <= a.grid().side() / 4;
        if (inside) worst = std::max(worst, std::abs(a.values[x] - b.values[b.grid().index(cx)]));
      }
      drift.push_back({{"eta", G.eta[e]}, {"max_abs_drift", worst}});
    }
    write_json(fs::path(c.out) / "green" / "doubling_drift.json",
               {{"provenance", provenance_json(c)}, {"sides", sides(c)}, {"tables", drift}});
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_verify(const ExperimentConfig& c) {
  verify::SuiteOptions opt;
  opt.threads = c.threads;
  opt.rerun_threads = c.verify.rerun_threads;
  opt.seed = c.seed;
  opt.green_sources = c.verify.sources;
  opt.artifacts = fs::path(c.out) / "verify" / "artifacts";
  json rows = json::array();
  bool ok = true;
  verify::run_suite(c.verify.criteria, opt, [&](const verify::CriterionResult& r) {
    std::printf("[%s] criterion %2d %-36s %s\n", r.pass ? "PASS" : "FAIL", r.id, r.title.c_str(), r.summary.c_str());
    std::fflush(stdout);
    log_event(r.pass ? "info" : "warn", "verify.criterion", {{"id", r.id}, {"pass", r.pass}, {"seconds", r.seconds}});
    ok = ok && r.pass;
    rows.push_back({{"id", r.id}, {"title", r.title}, {"pass", r.pass}, {"summary", r.summary},
                    {"digest", r.digest}, {"details", r.details}});
  });
  write_json(fs::path(c.out) / "verify" / "report.json", {{"provenance", provenance_json(c)}, {"criteria", rows}});
  if (!ok) throw CheckFailed("one or more acceptance criteria failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hlab: lattice stochastic homogenization lab"};
  app.require_subcommand(1);
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool double_L = false;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (TOML, or JSON by extension)")->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--threads", threads, "worker threads (overrides the config)")->check(CLI::PositiveNumber);
    sub->add_flag("--double-L", double_L, "also run at side 2L and report the drift");
  };
  auto* env = app.add_subcommand("env", "sample coefficient fields");
  auto* qm = app.add_subcommand("qmatrix", "effective symbol q(xi, eta)");
  auto* green = app.add_subcommand("green", "averaged Green's function and decay fits");
  auto* ver = app.add_subcommand("verify", "run the acceptance suite");
  for (auto* s : {env, qm, green, ver}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.out = out;
    if (threads) cfg.threads = *threads;
    if (double_L) cfg.double_L = true;
  } catch (const ConfigError& e) {
    log_event("error", "config", {{"message", e.what()}});
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  log_event("info", "start", {{"command", cmd}, {"config", config_path}, {"seed", cfg.seed}, {"config_hash", cfg.hash},
                              {"threads", cfg.threads}, {"out", cfg.out}});
  try {
    int rc = 0;
    if (cmd == "env") rc = cmd_env(cfg);
    else if (cmd == "qmatrix") rc = cmd_qmatrix(cfg);
    else if (cmd == "green") rc = cmd_green(cfg);
    else rc = cmd_verify(cfg);
    log_event("info", "done", {{"command", cmd}});
    return rc;
  } catch (const CheckFailed& e) {
    log_event("error", "check_failed", {{"message", e.what()}});
    return 1;
  } catch (const ConfigError& e) {
    log_event("error", "config", {{"message", e.what()}});
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    log_event("error", "runtime", {{"message", e.what()}});
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
