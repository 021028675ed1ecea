#include "support.hpp"

using namespace hlab;
using test::random_complex;
using test::random_real;

namespace {

RealField apply_operator(const CoefficientField& a, double eta, const RealField& u) {
  auto out = adjoint_gradient(apply_coefficient(a, forward_gradient(u)));
  for (std::size_t x = 0; x < u.sites(); ++x) out[x] += eta * u[x];
  return out;
}

}  // namespace

TEST(Elliptic, ConstantRightSide) {
  const TorusGrid g(2, 16);
  const auto a = sample_bernoulli(g, 0.5, 1);
  RealField h(g, 1);
  for (auto& v : h.data()) v = 3.0;
  const auto s = solve_elliptic(a, 0.25, h);
  for (double v : s.u.data()) EXPECT_NEAR(v, 12.0, 1e-9);
}

TEST(Elliptic, ConstantCoefficientGreen) {
  const TorusGrid g(2, 16);
  const double c = 1.7, eta = 0.3;
  RealField h(g, 1);
  h[0] = 1.0;
  const auto s = solve_elliptic(make_constant_field(g, c), eta, h);
  const auto ref = hlab::oracle::constant_green(g, c, eta);
  for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(s.u[x], ref(static_cast<Eigen::Index>(x)), 1e-10);
  const auto G = constant_coeff_green(eta, g);
  RealField h2(g, 1);
  h2[0] = 1.0;
  const auto s1 = solve_elliptic(make_constant_field(g, 1.0), eta, h2);
  EXPECT_LT(test::max_abs_diff(s1.u, G), 1e-10);
}

TEST(Elliptic, ReportedResidualIsCertified) {
  const TorusGrid g(2, 32);
  const auto a = sample_bernoulli(g, 0.8, 7);
  const auto h = random_real(g, 1, 3);
  for (auto pc : {Preconditioner::spectral_constant_coeff, Preconditioner::none}) {
    SolveControls c;
    c.preconditioner = pc;
    const auto s = solve_elliptic(a, 0.01, h, c);
    const double r = norm2(h - apply_operator(a, 0.01, s.u)) / norm2(h);
    EXPECT_LE(r, 1.01 * s.report.residual + 1e-15);
    EXPECT_LE(s.report.residual, c.rel_tolerance);
    EXPECT_LT(energy_identity_defect(a, 0.01, h, s.u), 1e-8);
  }
}

TEST(Elliptic, PreconditionerSpeedsUpAndAgrees) {
  const TorusGrid g(2, 32);
  const auto a = sample_bernoulli(g, 0.5, 8);
  const auto h = random_real(g, 1, 4);
  SolveControls none;
  none.preconditioner = Preconditioner::none;
  const auto s1 = solve_elliptic(a, 0.01, h);
  const auto s2 = solve_elliptic(a, 0.01, h, none);
  EXPECT_LT(s1.report.iterations, s2.report.iterations);
  EXPECT_LT(norm2(s1.u - s2.u) / norm2(s1.u), 1e-8);
}

TEST(Elliptic, FailuresAreReported) {
  const TorusGrid g(2, 16);
  const auto a = sample_bernoulli(g, 0.5, 9);
  const auto h = random_real(g, 1, 5);
  SolveControls c;
  c.max_iterations = 2;
  EXPECT_THROW(solve_elliptic(a, 0.01, h, c), ConvergenceError);
  EXPECT_THROW(solve_elliptic(a, 0.0, h), InvalidArgument);
  EXPECT_THROW(solve_elliptic(a, 0.1, RealField(TorusGrid(2, 8), 1)), InvalidArgument);
  c.rel_tolerance = 2.0;
  EXPECT_THROW(solve_elliptic(a, 0.1, h, c), InvalidArgument);
}

TEST(OperatorT, ConstantInputMatchesClosedForm) {
  const TorusGrid g(2, 8);
  const FourierPoint xi({0.4, -1.1});
  const double eta = 0.2, Lambda = 1.5;
  Eigen::VectorXcd v(2);
  v << cplx(1.0, 0.5), cplx(-0.3, 2.0);
  ComplexField f(g, 2);
  for (int j = 0; j < 2; ++j)
    for (auto& z : f.component(j)) z = v(j);
  const auto Tf = apply_T(f, xi, eta, Lambda);
  const auto ref = hlab::oracle::constant_input_T(xi.values(), eta, Lambda, v);
  for (int j = 0; j < 2; ++j)
    for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(std::abs(Tf(j, x) - ref(j)), 0.0, 1e-14);
}

TEST(OperatorT, ContractionAndSelfAdjointness) {
  const TorusGrid g(3, 6);
  const FourierPoint xi({0.1, 2.0, -3.0});
  for (double eta : {1e-6, 1e-2, 1.0, 100.0}) {
    const auto f = random_complex(g, 3, 1);
    const auto h = random_complex(g, 3, 2);
    const auto Tf = apply_T(f, xi, eta, 2.0);
    EXPECT_LE(norm2(Tf), norm2(f) * (1.0 + 1e-14));
    EXPECT_NEAR(std::abs(inner(Tf, h) - inner(f, apply_T(h, xi, eta, 2.0))), 0.0, 1e-10);
    // positive semidefinite
    EXPECT_GE(inner(f, Tf).real(), -1e-12);
  }
}

TEST(OperatorT, VanishesForLargeEta) {
  const TorusGrid g(2, 8);
  const auto f = random_complex(g, 2, 3);
  const double Lambda = 1.0;
  for (double eta : {1e2, 1e4, 1e6}) {
    const auto Tf = apply_T(f, FourierPoint::zero(2), eta, Lambda);
    // |e|^2 <= 4 d, so ||T|| <= 4 d Lambda / eta
    EXPECT_LE(norm2(Tf), 8.0 * Lambda / eta * norm2(f));
  }
}

TEST(OperatorT, ActsAsProjectionOnGradientsAsEtaVanishes) {
  const TorusGrid g(2, 8);
  const FourierPoint xi({0.5, 0.5});
  const auto psi = random_complex(g, 1, 6);
  const auto gp = twisted_gradient(psi, xi);
  EXPECT_LT(norm2(apply_T(gp, xi, 1e-10, 1.0) - gp) / norm2(gp), 1e-8);
}

TEST(OperatorT, RejectsBadArguments) {
  const TorusGrid g(2, 8);
  const ComplexField f(g, 2);
  EXPECT_THROW(apply_T(f, FourierPoint::zero(2), 0.0, 1.0), InvalidArgument);
  EXPECT_THROW(apply_T(f, FourierPoint::zero(2), 1.0, 0.0), InvalidArgument);
  EXPECT_THROW(apply_T(ComplexField(g, 1), FourierPoint::zero(2), 1.0, 1.0), InvalidArgument);
  EXPECT_THROW(apply_T(f, FourierPoint::zero(3), 1.0, 1.0), InvalidArgument);
}

TEST(Corrector, ConstantCoefficientsGiveZero) {
  const TorusGrid g(2, 16);
  for (const auto& xi : {FourierPoint::zero(2), FourierPoint({1.0, -2.0})}) {
    const auto s = solve_corrector_direct(make_constant_field(g, 2.0), xi, 0.1);
    const auto n = solve_corrector_neumann(make_constant_field(g, 2.0), xi, 0.1, 50);
    for (int k = 0; k < 2; ++k) {
      EXPECT_LT(norm2(s.phi[static_cast<std::size_t>(k)]), 1e-12);
      EXPECT_LT(norm2(n.phi[static_cast<std::size_t>(k)]), 1e-12);
    }
  }
}

TEST(Corrector, OneDimensionalFluxIsConstant) {
  const TorusGrid g(1, 64);
  const auto a = sample_bernoulli(g, 0.6, 2);
  SolveControls c;
  c.rel_tolerance = 1e-13;
  c.max_iterations = 10000;
  const auto s = solve_corrector_direct(a, FourierPoint::zero(1), 1e-7, c);
  std::vector<double> flux;
  for (std::size_t x = 0; x < g.size(); ++x) flux.push_back(a.entry(x, 0, 0) * (1.0 + s.grad[0][x].real()));
  const double hm = hlab::oracle::harmonic_mean_1d(a);
  // The flux jump across a site is eta Phi there, so its oscillation is at most eta sum |Phi|.
  double mass = 0.0;
  for (const auto& p : s.phi[0].data()) mass += std::abs(p);
  for (double f : flux) EXPECT_NEAR(f, hm, 1e-7 * mass + 1e-10);
}

TEST(Corrector, NeumannAgreesWithDirect) {
  const TorusGrid g(2, 16);
  const auto a = sample_bernoulli(g, 0.5, 4);
  const FourierPoint xi({0.3, -0.5});
  SolveControls c;
  c.rel_tolerance = 1e-13;
  const auto d = solve_corrector_direct(a, xi, 0.1, c);
  const auto n = solve_corrector_neumann(a, xi, 0.1, 500, c);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_LT(norm2(d.phi[k] - n.phi[k]) / norm2(d.phi[k]), 1e-8);
    EXPECT_LT(norm2(d.grad[k] - n.grad[k]) / norm2(d.grad[k]), 1e-8);
    EXPECT_LT(std::abs(mean(d.phi[k])), 1e-12);
    // increments contract at least at the rate 1 - lambda / Lambda
    const auto& inc = n.increments[k];
    for (std::size_t m = 3; m < inc.size(); ++m)
      if (inc[m - 1] > 1e-10) {
        EXPECT_LE(inc[m] / inc[m - 1], a.bounds.contraction() + 0.05);
      }
  }
  EXPECT_LT(d.residual, 1e-10);
  EXPECT_LT(n.residual, 1e-10);
}

TEST(Corrector, ArgumentChecks) {
  const TorusGrid g(2, 8);
  const auto a = sample_bernoulli(g, 0.5, 4);
  EXPECT_THROW(solve_corrector_direct(a, FourierPoint::zero(2), 0.0), InvalidArgument);
  EXPECT_THROW(solve_corrector_direct(a, FourierPoint::zero(1), 0.1), InvalidArgument);
  EXPECT_THROW(solve_corrector_neumann(a, FourierPoint::zero(2), 0.1, 0), InvalidArgument);
  EXPECT_THROW(solve_corrector_neumann(a, FourierPoint::zero(2), 0.1, 2), ConvergenceError);
}

TEST(ZeroMean, ProjectionProperties) {
  const TorusGrid g(2, 8);
  const auto f = random_complex(g, 2, 9);
  const auto p = project_zero_mean(f);
  for (int c = 0; c < 2; ++c) EXPECT_LT(std::abs(mean(p, c)), 1e-15);
  EXPECT_LT(test::max_abs_diff(project_zero_mean(p), p), 1e-15);
  EXPECT_NEAR(std::abs(inner(p, f - p)), 0.0, 1e-12);
}

TEST(ShiftedSymbols, MatchSymbolAtDualPoints) {
  const TorusGrid g(2, 6);
  const std::vector<double> xi{0.2, -0.7};
  const auto e = shifted_symbols(g, xi);
  for (std::size_t k = 0; k < g.size(); ++k) {
    auto z = dual_point(g, k);
    for (int j = 0; j < 2; ++j) z[static_cast<std::size_t>(j)] += xi[static_cast<std::size_t>(j)];
    const auto ref = symbol_e(z);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(std::abs(e[k * 2 + j] - ref[j]), 0.0, 1e-14);
  }
}
