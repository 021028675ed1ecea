#include <sstream>

#include "support.hpp"

using namespace hlab;

namespace {

std::vector<std::vector<double>> line_grid(int d, double step, int n) {
  std::vector<std::vector<double>> g;
  for (int k = 0; k < n; ++k) {
    std::vector<double> xi(static_cast<std::size_t>(d), 0.0);
    xi[0] = step * k;
    g.push_back(xi);
  }
  return g;
}

}  // namespace

TEST(Effective, ConstantEnvironmentGivesConstantMatrix) {
  const TorusGrid g(2, 8);
  const auto ens = sample_ensemble(EnvironmentSpec::constant(2, 1.7), g, 2, 1);
  for (const auto& xi : {FourierPoint::zero(2), FourierPoint({0.9, -2.5})})
    for (double eta : {1e-3, 1.0}) {
      const auto s = q_of_xi_eta(ens, xi, eta);
      EXPECT_LT((s.q - 1.7 * Eigen::MatrixXcd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT(s.stderr.maxCoeff(), 1e-12);
    }
}

TEST(Effective, DirectSolveMatchesSparseLu) {
  const TorusGrid g(2, 8);
  const auto ens = sample_ensemble(EnvironmentSpec::bernoulli(0.6), g, 3, 5);
  const FourierPoint xi({0.7, -1.9});
  SolveControls c;
  c.rel_tolerance = 1e-12;
  const auto s = q_of_xi_eta(ens, xi, 0.05, c);
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const auto ref = hlab::oracle::corrector_q(ens[i], xi.values(), 0.05);
    EXPECT_LT((s.per_sample[i] - ref).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_LT(s.hermitian_defect, 1e-9);
  EXPECT_LT((s.q - s.q.adjoint()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(s.max_residual, 1e-10);
  EXPECT_EQ(s.n_samples, 3);
  EXPECT_EQ(s.side, 8);
}

TEST(Effective, RealAtZeroFrequencyAndWithinBounds) {
  const TorusGrid g(2, 16);
  const auto ens = sample_ensemble(EnvironmentSpec::bernoulli(0.5), g, 6, 2);
  const auto s = q_of_xi_eta(ens, FourierPoint::zero(2), 0.01);
  EXPECT_LT(s.q.imag().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(s.within_bounds(ens[0].bounds));
  const auto [lo, hi] = s.rayleigh_range();
  EXPECT_GT(lo, 0.5);
  EXPECT_LT(hi, 1.5);
  // q sits between the harmonic and arithmetic means of the site law.
  EXPECT_LT(hi, 1.0 + 4.0 * s.stderr.maxCoeff());
  EXPECT_GT(lo, 0.75 - 4.0 * s.stderr.maxCoeff());
}

TEST(Effective, SeriesAgreesWithDirect) {
  const TorusGrid g(2, 8);
  const auto ens = sample_ensemble(EnvironmentSpec::bernoulli(0.4), g, 2, 3);
  const FourierPoint xi({0.5, 1.0});
  SolveControls c;
  c.rel_tolerance = 1e-13;
  const auto direct = q_of_xi_eta(ens, xi, 0.1, c);
  const auto series = q_via_series(ens, xi, 0.1, 60);
  EXPECT_LT((series.symbol.q - direct.q).cwiseAbs().maxCoeff(), 1e-10 + series.tail_bound);
  EXPECT_EQ(series.term_norms.size(), 60u);
  EXPECT_LE(series.fitted_ratio, ens[0].bounds.contraction() + 1e-9);
  const double r = ens[0].bounds.contraction();
  EXPECT_NEAR(series.tail_bound, ens[0].bounds.Lambda * std::pow(r, 62) / (1 - r), 1e-15);
  EXPECT_THROW(q_via_series(ens, xi, 0.1, 0), InvalidArgument);
}

TEST(Effective, ExtrapolationConstantEnvironment) {
  const TorusGrid g(2, 8);
  const auto ens = sample_ensemble(EnvironmentSpec::constant(2, 2.0), g, 2, 1);
  const auto ex = extrapolate_q00(ens, {4e-3, 2e-3, 1e-3});
  EXPECT_LT((ex.symbol.q - 2.0 * Eigen::MatrixXcd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(ex.uncertainty(0, 0), 1e-10);
  EXPECT_FALSE(ex.non_monotone);
  EXPECT_EQ(ex.ladder.size(), 3u);
  EXPECT_THROW(extrapolate_q00(ens, {1e-3, 2e-3, 4e-3}), InvalidArgument);
  EXPECT_THROW(extrapolate_q00(ens, {1e-3, 2e-3}), InvalidArgument);
}

TEST(Effective, ExtrapolationOneDimensionalHarmonicMean) {
  const TorusGrid g(1, 1024);
  const auto ens = sample_ensemble(EnvironmentSpec::bernoulli(0.5), g, 8, 4);
  const auto ex = extrapolate_q00(ens, {4e-3, 2e-3, 1e-3});
  std::vector<double> hm;
  for (const auto& a : ens) hm.push_back(hlab::oracle::harmonic_mean_1d(a));
  const auto m = mean_stderr(hm);
  EXPECT_NEAR(ex.symbol.q(0, 0).real(), m.mean, 3.0 * ex.spread(0, 0) + 1e-3);
  EXPECT_NEAR(m.mean, hlab::oracle::bernoulli_harmonic_mean(0.5), 4.0 * m.stderr);
  // q(0, eta) decreases to the harmonic mean
  EXPECT_GT(ex.ladder[0].q(0, 0).real(), ex.ladder[2].q(0, 0).real());
  EXPECT_GT(ex.ladder[2].q(0, 0).real(), ex.symbol.q(0, 0).real() - 1e-6);
}

TEST(Effective, StderrShrinksWithSamples) {
  const TorusGrid g(2, 8);
  const auto env = EnvironmentSpec::bernoulli(0.5);
  const auto small = q_of_xi_eta(env, g, FourierPoint::zero(2), 0.1, 16, {}, 9);
  const auto large = q_of_xi_eta(env, g, FourierPoint::zero(2), 0.1, 64, {}, 9);
  const double ratio = large.stderr(0, 0) / small.stderr(0, 0);
  EXPECT_GT(ratio, 0.3);
  EXPECT_LT(ratio, 0.75);
}

TEST(Effective, ThreadCountDoesNotChangeResults) {
  const TorusGrid g(2, 8);
  const auto env = EnvironmentSpec::bernoulli(0.5);
  const auto a = q_of_xi_eta(env, g, FourierPoint({0.2, 0.1}), 0.1, 6, {}, 3, 1);
  const auto b = q_of_xi_eta(env, g, FourierPoint({0.2, 0.1}), 0.1, 6, {}, 3, 3);
  EXPECT_EQ((a.q - b.q).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Holder, ConstantEnvironmentIsDegenerate) {
  const TorusGrid g(1, 8);
  const auto ens = sample_ensemble(EnvironmentSpec::constant(1, 1.0), g, 2, 1);
  std::vector<double> eg;
  for (int k = 0; k < 8; ++k) eg.push_back(0.002 + 0.004 * k);
  const auto r = holder_scan(ensemble_evaluator(ens), line_grid(1, 0.1, 8), eg, 1.0);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.alpha, 0.0);
}

TEST(Holder, SyntheticExponentsRecovered) {
  const SymbolEvaluator f = [](const FourierPoint& xi, double eta) {
    const double v = 1.0 + 0.2 * std::pow(xi.norm(), 0.7) + 0.1 * std::pow(eta, 0.3);
    return std::vector<Eigen::MatrixXcd>(3, v * Eigen::MatrixXcd::Identity(2, 2));
  };
  std::vector<double> eg;
  for (int k = 0; k < 8; ++k) eg.push_back(0.004 * k);
  const auto r = holder_scan(f, line_grid(2, 0.1, 8), eg, 1.0);
  EXPECT_FALSE(r.degenerate);
  EXPECT_NEAR(r.alpha_raw_xi, 0.7, 0.02);
  EXPECT_NEAR(r.alpha_raw_eta, 0.6, 0.02);
  EXPECT_NEAR(r.alpha, 0.6, 0.02);
  EXPECT_FALSE(r.insufficient_signal);
  const auto j = r.to_json();
  EXPECT_EQ(j["pairs"].size(), 56u);
  EXPECT_THROW(holder_scan(f, line_grid(2, 0.1, 4), eg, 1.0), InvalidArgument);
}

TEST(SymbolCsv, HeaderAndRow) {
  const TorusGrid g(2, 4);
  const auto ens = sample_ensemble(EnvironmentSpec::constant(2, 1.0), g, 2, 1);
  const auto s = q_of_xi_eta(ens, FourierPoint({0.5, 0.25}), 0.5);
  std::ostringstream os;
  write_symbol_csv_header(os, 2);
  write_symbol_csv_row(os, s);
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header.rfind("xi_1,xi_2,eta,re_q_11,", 0), 0u);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
  EXPECT_EQ(row.rfind("0.5,0.25,0.5,1,", 0), 0u);
}
