#pragma once

// Reference computations used by the tests and the acceptance suite. They
// avoid the FFT and CG paths of the library: sparse direct solves in real
// space, closed forms, and plain loops.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "hlab/environments.hpp"
#include "hlab/error.hpp"
#include "hlab/grid.hpp"

namespace hlab::oracle {

using SpMat = Eigen::SparseMatrix<std::complex<double>>;
using Triplet = Eigen::Triplet<std::complex<double>>;

/// Sparse matrix of the twisted forward difference in direction j:
/// (D f)(x) = exp(-i xi_j) f(x + e_j) - f(x).
inline SpMat twisted_difference(const TorusGrid& g, int j, double xi_j) {
  const auto n = static_cast<Eigen::Index>(g.size());
  std::vector<Triplet> t;
  const std::complex<double> ph = std::polar(1.0, -xi_j);
  for (std::size_t x = 0; x < g.size(); ++x) {
    auto c = g.coords(x);
    c[static_cast<std::size_t>(j)] = (c[static_cast<std::size_t>(j)] + 1) % g.side();
    t.emplace_back(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(g.index(c)), ph);
    t.emplace_back(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(x), -1.0);
  }
  SpMat D(n, n);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

/// q(xi, eta) of one coefficient field by a sparse LU solve of the projected
/// corrector equation eta Phi + P D^* a (D Phi + e_k) = 0, mean(Phi) = 0,
/// written as the bordered system [A, -1; 1^T, 0] [Phi; c] = [-D^* a e_k; 0].
inline Eigen::MatrixXcd corrector_q(const CoefficientField& a, std::span<const double> xi, double eta) {
  const auto& g = a.grid();
  const int d = g.dim();
  const auto n = static_cast<Eigen::Index>(g.size());
  std::vector<SpMat> D;
  for (int j = 0; j < d; ++j) D.push_back(twisted_difference(g, j, xi[static_cast<std::size_t>(j)]));
  // A = eta I + sum_{ij} D_i^* diag(a_ij) D_j
  SpMat A(n, n);
  A.setIdentity();
  A *= eta;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      Eigen::VectorXcd aij(n);
      for (Eigen::Index x = 0; x < n; ++x) aij(x) = a.entry(static_cast<std::size_t>(x), i, j);
      SpMat diag(n, n);
      std::vector<Triplet> t;
      for (Eigen::Index x = 0; x < n; ++x) t.emplace_back(x, x, aij(x));
      diag.setFromTriplets(t.begin(), t.end());
      A += SpMat(D[static_cast<std::size_t>(i)].adjoint()) * diag * D[static_cast<std::size_t>(j)];
    }
  std::vector<Triplet> bt;
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) bt.emplace_back(it.row(), it.col(), it.value());
  for (Eigen::Index x = 0; x < n; ++x) {
    bt.emplace_back(x, n, -1.0);
    bt.emplace_back(n, x, 1.0);
  }
  SpMat B(n + 1, n + 1);
  B.setFromTriplets(bt.begin(), bt.end());
  B.makeCompressed();
  Eigen::SparseLU<SpMat> lu;
  lu.compute(B);
  if (lu.info() != Eigen::Success) throw std::runtime_error("oracle::corrector_q: factorization failed");

  Eigen::MatrixXcd q(d, d);
  for (int k = 0; k < d; ++k) {
    Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(n + 1);
    for (int i = 0; i < d; ++i) {
      Eigen::VectorXcd col(n);
      for (Eigen::Index x = 0; x < n; ++x) col(x) = a.entry(static_cast<std::size_t>(x), i, k);
      rhs.head(n) -= SpMat(D[static_cast<std::size_t>(i)].adjoint()) * col;
    }
    const Eigen::VectorXcd sol = lu.solve(rhs);
    const Eigen::VectorXcd phi = sol.head(n);
    std::vector<Eigen::VectorXcd> grad;
    for (int j = 0; j < d; ++j) grad.push_back(D[static_cast<std::size_t>(j)] * phi);
    for (int i = 0; i < d; ++i) {
      std::complex<double> s = 0.0;
      for (Eigen::Index x = 0; x < n; ++x) {
        std::complex<double> v = a.entry(static_cast<std::size_t>(x), i, k);
        for (int j = 0; j < d; ++j) v += a.entry(static_cast<std::size_t>(x), i, j) * grad[static_cast<std::size_t>(j)](x);
        s += v;
      }
      q(i, k) = s / static_cast<double>(n);
    }
  }
  return q;
}

/// 1-d q(0, 0) of one sample on the torus: the series-resistor (harmonic) mean.
inline double harmonic_mean_1d(const CoefficientField& a) {
  if (a.dim() != 1) throw InvalidArgument("harmonic_mean_1d: d must be 1");
  double s = 0.0;
  for (std::size_t x = 0; x < a.grid().size(); ++x) s += 1.0 / a.entry(x, 0, 0);
  return static_cast<double>(a.grid().size()) / s;
}

/// Ensemble limit of q(0, 0) for d = 1 Bernoulli: 1 / E[1/a] = 1 - gamma^2.
inline double bernoulli_harmonic_mean(double gamma) { return 1.0 / (0.5 / (1.0 + gamma) + 0.5 / (1.0 - gamma)); }

/// Dense real-space inverse of (m^2 + grad^* grad) on the torus; column 0 is
/// the covariance kernel x -> <phi(0) phi(x)> of the Gaussian free field.
inline Eigen::VectorXd massive_kernel(const TorusGrid& g, double mass) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) * (mass * mass);
  for (std::size_t x = 0; x < g.size(); ++x)
    for (int j = 0; j < g.dim(); ++j) {
      const auto y = g.shift(x, j, +1);
      const auto X = static_cast<Eigen::Index>(x), Y = static_cast<Eigen::Index>(y);
      A(X, X) += 1.0;
      A(Y, Y) += 1.0;
      A(X, Y) -= 1.0;
      A(Y, X) -= 1.0;
    }
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(n);
  e0(0) = 1.0;
  return A.llt().solve(e0);
}

/// (f, (-lambda Delta + m^2)^{-1} f) by a dense solve; Delta = -grad^* grad.
inline double massive_quadratic_form(const TorusGrid& g, double lambda, double mass, const Eigen::VectorXd& f) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) * (mass * mass);
  for (std::size_t x = 0; x < g.size(); ++x)
    for (int j = 0; j < g.dim(); ++j) {
      const auto X = static_cast<Eigen::Index>(x), Y = static_cast<Eigen::Index>(g.shift(x, j, +1));
      A(X, X) += lambda;
      A(Y, Y) += lambda;
      A(X, Y) -= lambda;
      A(Y, X) -= lambda;
    }
  return f.dot(A.llt().solve(f));
}

/// Constant-coefficient Green's function c I by a sparse real-space solve of
/// (eta + c grad^* grad) u = delta_0.
inline Eigen::VectorXd constant_green(const TorusGrid& g, double c, double eta) {
  const auto n = static_cast<Eigen::Index>(g.size());
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t x = 0; x < g.size(); ++x) {
    const auto X = static_cast<Eigen::Index>(x);
    t.emplace_back(X, X, eta);
    for (int j = 0; j < g.dim(); ++j) {
      const auto Y = static_cast<Eigen::Index>(g.shift(x, j, +1));
      t.emplace_back(X, X, c);
      t.emplace_back(Y, Y, c);
      t.emplace_back(X, Y, -c);
      t.emplace_back(Y, X, -c);
    }
  }
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(t.begin(), t.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(n);
  e0(0) = 1.0;
  return ldlt.solve(e0);
}

/// T applied to a constant vector v: [e(xi)^* v] e(xi) / [eta/Lambda + |e(xi)|^2].
inline Eigen::VectorXcd constant_input_T(std::span<const double> xi, double eta, double Lambda, const Eigen::VectorXcd& v) {
  const auto d = static_cast<Eigen::Index>(xi.size());
  Eigen::VectorXcd e(d);
  for (Eigen::Index j = 0; j < d; ++j) e(j) = std::polar(1.0, -xi[static_cast<std::size_t>(j)]) - 1.0;
  return (e.adjoint() * v)(0) * e / (eta / Lambda + e.squaredNorm());
}

}  // namespace hlab::oracle
