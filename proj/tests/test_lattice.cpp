#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <numbers>

#include "support.hpp"

using namespace hlab;
using test::random_complex;
using test::random_real;

constexpr double pi = std::numbers::pi;

TEST(Gradient, ConstantFieldHasZeroGradient) {
  const TorusGrid g(3, 4);
  RealField f(g, 1);
  for (auto& v : f.data()) v = 2.5;
  const auto gf = forward_gradient(f);
  for (double v : gf.data()) EXPECT_EQ(v, 0.0);
  RealField c(g, 3);
  for (auto& v : c.data()) v = -1.0;
  const auto dc = adjoint_gradient(c);
  for (double v : dc.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, DeltaInOneDimension) {
  const TorusGrid g(1, 4);
  RealField d(g, 1);
  d[0] = 1.0;
  const auto gr = forward_gradient(d);
  EXPECT_EQ(gr.data(), (std::vector<double>{-1, 0, 0, 1}));
  const auto lap = adjoint_gradient(gr);
  EXPECT_EQ(lap.data(), (std::vector<double>{2, -1, 0, -1}));
}

TEST(Gradient, AdjointnessOnRandomFields) {
  for (int d : {1, 2, 3}) {
    const TorusGrid g(d, d == 3 ? 4 : 8);
    const auto f = random_real(g, 1, 10 + d);
    const auto v = random_real(g, d, 20 + d);
    EXPECT_NEAR(inner(forward_gradient(f), v), inner(f, adjoint_gradient(v)), 1e-11);
  }
}

TEST(Gradient, LaplacianEigenfunctions) {
  const TorusGrid g(2, 6);
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto z = dual_point(g, k);
    ComplexField w(g, 1);
    for (std::size_t x = 0; x < g.size(); ++x) {
      const auto c = g.coords(x);
      w[x] = std::polar(1.0, -(z[0] * c[0] + z[1] * c[1]));
    }
    const auto lw = adjoint_gradient(forward_gradient(w));
    const double lam = symbol_e_norm2(z);
    for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(std::abs(lw[x] - lam * w[x]), 0.0, 1e-12);
  }
}

TEST(Twisted, ReducesToGradientAtZero) {
  const TorusGrid g(2, 6);
  const auto f = random_complex(g, 1, 3);
  EXPECT_LT(test::max_abs_diff(twisted_gradient(f, FourierPoint::zero(2)), forward_gradient(f)), 1e-15);
}

TEST(Twisted, ConstantInputGivesSymbol) {
  const TorusGrid g(2, 4);
  ComplexField one(g, 1);
  for (auto& v : one.data()) v = 1.0;
  const FourierPoint xi({0.3, -2.0});
  const auto e = symbol_e(xi);
  const auto t = twisted_gradient(one, xi);
  for (int j = 0; j < 2; ++j)
    for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(std::abs(t(j, x) - e[static_cast<std::size_t>(j)]), 0.0, 1e-15);
}

TEST(Twisted, AdjointnessOnRandomFields) {
  const TorusGrid g(2, 8);
  for (int trial = 0; trial < 5; ++trial) {
    CounterRng r(trial);
    const FourierPoint xi({(2 * r.next_uniform() - 1) * pi, (2 * r.next_uniform() - 1) * pi});
    const auto f = random_complex(g, 1, 100 + trial);
    const auto v = random_complex(g, 2, 200 + trial);
    EXPECT_NEAR(std::abs(inner(twisted_gradient(f, xi), v) - inner(f, twisted_adjoint(v, xi))), 0.0, 1e-11);
  }
}

TEST(Twisted, SpectralConsistencyBruteForce) {
  const TorusGrid g(2, 4);
  const FourierPoint xi({0.7, -1.3});
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto z = dual_point(g, k);
    ComplexField w(g, 1);
    for (std::size_t x = 0; x < g.size(); ++x) {
      const auto c = g.coords(x);
      w[x] = std::polar(1.0, -(z[0] * c[0] + z[1] * c[1]));
    }
    const auto lw = twisted_adjoint(twisted_gradient(w, xi), xi);
    const double lam = symbol_e_norm2(std::vector<double>{z[0] + xi[0], z[1] + xi[1]});
    for (std::size_t x = 0; x < g.size(); ++x) EXPECT_NEAR(std::abs(lw[x] - lam * w[x]), 0.0, 1e-12);
  }
}

TEST(Symbol, Examples) {
  EXPECT_EQ(symbol_e_norm2(std::vector<double>{0.0, 0.0}), 0.0);
  const auto e = symbol_e(FourierPoint({pi, 0.0}));
  EXPECT_NEAR(std::abs(e[0] - cplx(-2.0, 0.0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(e[1]), 0.0, 1e-15);
  EXPECT_NEAR(symbol_e_norm2(std::vector<double>{pi, 0.0}), 4.0, 1e-15);
  const auto e1 = symbol_e(FourierPoint({pi / 2}));
  EXPECT_NEAR(std::abs(e1[0] - cplx(-1.0, -1.0)), 0.0, 1e-15);
  EXPECT_NEAR(symbol_e_norm2(std::vector<double>{pi / 2}), 2.0, 1e-15);
}

TEST(FourierPointTest, RejectsOutOfRange) { EXPECT_THROW(FourierPoint({4.0}), InvalidArgument); }

TEST(Dft, DeltaTransformsToOnes) {
  const TorusGrid g(2, 8);
  RealField d(g, 1);
  d[0] = 1.0;
  const auto D = dft(d);
  for (const auto& v : D.data()) EXPECT_NEAR(std::abs(v - 1.0), 0.0, 1e-15);
}

TEST(Dft, SignConventionBruteForce) {
  const TorusGrid g(2, 4);
  const auto f = random_complex(g, 1, 7);
  const auto F = dft(f);
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto z = dual_point(g, k);
    cplx s = 0.0;
    for (std::size_t x = 0; x < g.size(); ++x) {
      const auto c = g.coords(x);
      s += f[x] * std::polar(1.0, z[0] * c[0] + z[1] * c[1]);
    }
    EXPECT_NEAR(std::abs(F[k] - s), 0.0, 1e-12);
  }
}

TEST(Dft, RoundTripAndParseval) {
  const TorusGrid g(3, 6);
  const auto f = random_complex(g, 2, 8);
  const auto F = dft(f);
  EXPECT_LT(test::max_abs_diff(idft(F), f) / norm2(f), 1e-12);
  EXPECT_NEAR(norm2(F) * norm2(F) / static_cast<double>(g.size()), norm2(f) * norm2(f), 1e-9);
}

TEST(ConstantGreen, DefiningEquationResidual) {
  const TorusGrid g(2, 64);
  const auto G = constant_coeff_green(0.1, g);
  auto r = adjoint_gradient(forward_gradient(G));
  for (std::size_t x = 0; x < g.size(); ++x) r[x] += 0.1 * G[x];
  r[0] -= 1.0;
  EXPECT_LT(norm2(r), 1e-10);
}

TEST(ConstantGreen, OneDimensionalInfiniteLatticeValue) {
  // G(0) on Z is (2 pi)^{-1} int 1 / (eta + 2 - 2 cos xi) d xi.
  const double eta = 1.0;
  const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                       [&](double x) { return 1.0 / (eta + 2.0 - 2.0 * std::cos(x)); }, -pi, pi, 10, 1e-14) /
                   (2 * pi);
  EXPECT_NEAR(q, 1.0 / std::sqrt(5.0), 1e-12);
  const auto G = constant_coeff_green(eta, TorusGrid(1, 128));
  EXPECT_NEAR(G[0], q, 1e-12);
  // L-doubling drift is already at roundoff for eta = 1.
  EXPECT_NEAR(constant_coeff_green(eta, TorusGrid(1, 256))[0], G[0], 1e-14);
}

TEST(ConstantGreen, SymmetryPositivityMonotonicity) {
  const TorusGrid g(2, 32);
  const auto G = constant_coeff_green(0.05, g);
  for (std::size_t x = 0; x < g.size(); ++x) {
    EXPECT_GT(G[x], 0.0);
    const auto c = g.coords(x);
    EXPECT_NEAR(G[x], G[g.index({c[1], c[0]})], 1e-14);
    EXPECT_NEAR(G[x], G[g.index({-c[0], c[1]})], 1e-14);
    EXPECT_NEAR(G[x], G[g.index({c[0], -c[1]})], 1e-14);
  }
  for (int r = 0; r < 16; ++r) EXPECT_GT(G[g.index({r, 0})], G[g.index({r + 1, 0})]);
}

TEST(ConstantGreen, SecondDifferenceKernelDecayIsBounded) {
  const TorusGrid g(2, 64);
  double worst = 0.0;
  for (double eta : {1.0, 0.3, 0.1, 0.03, 0.01}) {
    const auto G = constant_coeff_green(eta, g);
    const auto H = forward_gradient(adjoint_gradient(forward_gradient(G)));
    for (std::size_t x = 0; x < g.size(); ++x) {
      if (g.distance(x) > 16.0) continue;
      double m = 0.0;
      for (int i = 0; i < 2; ++i) m = std::max(m, std::abs(H(i, x)));
      worst = std::max(worst, m * std::pow(1.0 + g.distance(x), 2.0));
    }
  }
  EXPECT_LT(worst, 10.0);
}

TEST(ConstantGreen, RejectsNonPositiveEta) {
  EXPECT_THROW(constant_coeff_green(0.0, TorusGrid(1, 8)), InvalidArgument);
  EXPECT_THROW(constant_coeff_green(-1.0, TorusGrid(1, 8)), InvalidArgument);
  EXPECT_THROW(constant_coeff_green(1e-9, TorusGrid(1, 8)), InvalidArgument);
}
