#pragma once

// Variable-coefficient elliptic solves, the operator T_{xi,eta}, and the
// corrector Phi(xi, eta) on the torus.
//
// The torus realization of the environment equation replaces d_xi by the
// twisted differences and the ensemble mean by the spatial mean:
//
//   eta Phi_k + P grad_xi^* a (grad_xi Phi_k + e_k) = 0,   mean(Phi_k) = 0.

#include <cmath>
#include <string>
#include <vector>

#include "hlab/environments.hpp"
#include "hlab/fft.hpp"
#include "hlab/lattice.hpp"

namespace hlab {

enum class Preconditioner { spectral_constant_coeff, none };

struct SolveControls {
  double rel_tolerance = 1e-10;
  int max_iterations = 2000;
  Preconditioner preconditioner = Preconditioner::spectral_constant_coeff;

  void validate() const {
    if (!(rel_tolerance > 0.0 && rel_tolerance < 1.0))
      throw InvalidArgument("SolveControls: rel_tolerance must be in (0, 1)");
    if (max_iterations < 1) throw InvalidArgument("SolveControls: max_iterations must be >= 1");
  }
};

struct SolveReport {
  double residual = 0.0;  ///< true relative residual, recomputed from the operator
  int iterations = 0;
};

namespace detail {

inline double real_inner(const RealField& a, const RealField& b) { return inner(a, b); }
inline double real_inner(const ComplexField& a, const ComplexField& b) { return inner(a, b).real(); }

template <class T>
void axpy(Field<T>& y, T alpha, const Field<T>& x) {
  auto& yd = y.data();
  const auto& xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += alpha * xd[i];
}

}  // namespace detail

/// Preconditioned conjugate gradients for a Hermitian positive definite A.
/// Convergence is only declared after the true residual ||b - A x|| / ||b||
/// has been recomputed and found below tolerance.
template <class T, class Op, class Prec>
SolveReport conjugate_gradient(const Op& A, const Prec& M, const Field<T>& b, Field<T>& x, const SolveControls& c,
                               const std::string& who) {
  c.validate();
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    x = Field<T>(b.grid(), b.components());
    return {};
  }
  Field<T> r = b - A(x);
  Field<T> z = M(r);
  Field<T> p = z;
  double rz = detail::real_inner(r, z);
  int it = 0;
  double rel = norm2(r) / bnorm;
  while (it < c.max_iterations) {
    if (rel <= c.rel_tolerance) {
      r = b - A(x);
      rel = norm2(r) / bnorm;
      if (rel <= c.rel_tolerance) return {rel, it};
      z = M(r);
      p = z;
      rz = detail::real_inner(r, z);
    }
    const Field<T> Ap = A(p);
    const double pAp = detail::real_inner(p, Ap);
    if (!(pAp > 0.0) || !std::isfinite(pAp))
      throw NotPositiveDefinite(who + ": operator is not positive definite (p.Ap = " + std::to_string(pAp) +
                                "); check the coefficient field");
    const double alpha = rz / pAp;
    detail::axpy(x, T(alpha), p);
    detail::axpy(r, T(-alpha), Ap);
    ++it;
    rel = norm2(r) / bnorm;
    if (rel <= c.rel_tolerance) continue;
    z = M(r);
    const double rz_new = detail::real_inner(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < p.data().size(); ++i) p.data()[i] = z.data()[i] + beta * p.data()[i];
  }
  const double true_rel = norm2(b - A(x)) / bnorm;
  if (true_rel <= c.rel_tolerance) return {true_rel, it};
  throw ConvergenceError(who + ": no convergence after " + std::to_string(it) + " iterations", true_rel, it);
}

/// (a g)(x) = a(x) g(x) for a vector field g.
template <class T>
Field<T> apply_coefficient(const CoefficientField& a, const Field<T>& g) {
  const int d = a.dim();
  if (g.components() != d || !(g.grid() == a.grid())) throw InvalidArgument("apply_coefficient: shape mismatch");
  Field<T> out(g.grid(), d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const auto aij = a.a.component(i * d + j);
      const auto gj = g.component(j);
      auto oi = out.component(i);
      for (std::size_t x = 0; x < g.sites(); ++x) oi[x] += aij[x] * gj[x];
    }
  return out;
}

/// Subtracts the spatial mean of every component.
template <class T>
Field<T> project_zero_mean(Field<T> f) {
  for (int c = 0; c < f.components(); ++c) {
    const T m = mean(f, c);
    for (auto& v : f.component(c)) v -= m;
  }
  return f;
}

/// e(zeta_k + xi) for every dual index k, flattened as [k * d + j].
inline std::vector<cplx> shifted_symbols(const TorusGrid& g, std::span<const double> xi) {
  const int d = g.dim();
  std::vector<cplx> out(g.size() * static_cast<std::size_t>(d));
  for (std::size_t k = 0; k < g.size(); ++k)
    for (int j = 0; j < d; ++j) {
      const double z = 2.0 * std::numbers::pi * g.coord(k, j) / g.side() + (xi.empty() ? 0.0 : xi[static_cast<std::size_t>(j)]);
      out[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] = std::polar(1.0, -z) - 1.0;
    }
  return out;
}

// ---------------------------------------------------------------------------
// eta u + grad^* a grad u = h

struct EllipticSolution {
  RealField u;
  SolveReport report;
};

inline EllipticSolution solve_elliptic(const CoefficientField& a, double eta, const RealField& h,
                                       const SolveControls& controls = {}) {
  check_eta(eta, "solve_elliptic");
  if (!(h.grid() == a.grid()) || h.components() != 1) throw InvalidArgument("solve_elliptic: h must be a scalar field on a's grid");
  const auto& g = a.grid();
  const double Lambda = a.bounds.Lambda;
  auto A = [&](const RealField& u) {
    auto out = adjoint_gradient(apply_coefficient(a, forward_gradient(u)));
    for (std::size_t x = 0; x < u.sites(); ++x) out[x] += eta * u[x];
    return out;
  };
  std::vector<double> inv;
  if (controls.preconditioner == Preconditioner::spectral_constant_coeff) {
    inv = shifted_symbol_norms(g, {});
    for (auto& v : inv) v = 1.0 / (eta + Lambda * v);
  }
  auto M = [&](const RealField& r) {
    if (inv.empty()) return r;
    return real_part(apply_fourier_multiplier(to_complex(r), [&](std::size_t k) { return cplx(inv[k]); }));
  };
  EllipticSolution sol{RealField(g, 1), {}};
  sol.report = conjugate_gradient(A, M, h, sol.u, controls, "solve_elliptic");
  return sol;
}

/// eta ||u||^2 + <grad u, a grad u> - <u, h>, relative to |<u, h>|.
inline double energy_identity_defect(const CoefficientField& a, double eta, const RealField& h, const RealField& u) {
  const auto gu = forward_gradient(u);
  const double lhs = eta * inner(u, u) + inner(gu, apply_coefficient(a, gu));
  const double rhs = inner(u, h);
  return std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-300);
}

// ---------------------------------------------------------------------------
// T_{xi,eta}

/// T g = grad_xi psi with (eta / Lambda) psi + grad_xi^* grad_xi psi = grad_xi^* g, by spectral division.
inline ComplexField apply_T(const ComplexField& g, const FourierPoint& xi, double eta, double Lambda) {
  if (!(eta > 0.0)) throw InvalidArgument("apply_T: eta must be > 0");
  if (!(Lambda > 0.0)) throw InvalidArgument("apply_T: Lambda must be > 0");
  const auto& grid = g.grid();
  const int d = grid.dim();
  detail::require_vector(g.components(), d, "apply_T");
  if (xi.dim() != d) throw InvalidArgument("apply_T: xi dimension mismatch");
  const auto e = shifted_symbols(grid, xi.values());
  ComplexField spec = dft(g);
  const double s = eta / Lambda;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const cplx* ek = &e[k * static_cast<std::size_t>(d)];
    cplx proj = 0.0;
    double n2 = 0.0;
    for (int j = 0; j < d; ++j) {
      proj += std::conj(ek[j]) * spec(j, k);
      n2 += std::norm(ek[j]);
    }
    proj /= s + n2;
    for (int j = 0; j < d; ++j) spec(j, k) = ek[j] * proj;
  }
  return idft(std::move(spec));
}

// ---------------------------------------------------------------------------
// Corrector

struct CorrectorSolution {
  std::vector<ComplexField> phi;   ///< Phi_k, k = 0..d-1, each mean zero
  std::vector<ComplexField> grad;  ///< grad_xi Phi_k (d components each)
  FourierPoint xi;
  double eta = 0.0;
  double residual = 0.0;  ///< worst relative residual of the corrector equation over k
  int iterations = 0;     ///< total over k
  std::vector<std::vector<double>> increments;  ///< Neumann only: increment norms per k
};

namespace detail {

/// (a e_k)_j(x) = a_jk(x), complexified.
inline ComplexField coefficient_column(const CoefficientField& a, int k) {
  const int d = a.dim();
  ComplexField out(a.grid(), d);
  for (int j = 0; j < d; ++j) {
    const auto src = a.a.component(j * d + k);
    auto dst = out.component(j);
    for (std::size_t x = 0; x < src.size(); ++x) dst[x] = src[x];
  }
  return out;
}

inline ComplexField add_unit(ComplexField w, int k) {
  for (auto& v : w.component(k)) v += 1.0;
  return w;
}

/// Relative residual of eta Phi + P grad_xi^* a (grad_xi Phi + e_k) = 0.
inline double corrector_residual(const CoefficientField& a, const FourierPoint& xi, double eta, const ComplexField& phi,
                                 int k) {
  const auto rhs = project_zero_mean(twisted_adjoint(coefficient_column(a, k), xi));
  auto lhs = project_zero_mean(twisted_adjoint(apply_coefficient(a, add_unit(twisted_gradient(phi, xi), k)), xi));
  for (std::size_t x = 0; x < phi.sites(); ++x) lhs[x] += eta * phi[x];
  const double scale = norm2(rhs);
  const double mean_defect = std::abs(mean(phi)) * std::sqrt(static_cast<double>(phi.sites()));
  return (norm2(lhs) + mean_defect) / (scale > 0.0 ? scale : 1.0);
}

}  // namespace detail

/// Conjugate-gradient solve of the corrector equation for every direction k.
inline CorrectorSolution solve_corrector_direct(const CoefficientField& a, const FourierPoint& xi, double eta,
                                                const SolveControls& controls = {}) {
  check_eta(eta, "solve_corrector_direct");
  const auto& g = a.grid();
  const int d = g.dim();
  if (xi.dim() != d) throw InvalidArgument("solve_corrector_direct: xi dimension mismatch");
  const double Lambda = a.bounds.Lambda;

  auto A = [&](const ComplexField& f) {
    auto out = project_zero_mean(twisted_adjoint(apply_coefficient(a, twisted_gradient(f, xi)), xi));
    for (std::size_t x = 0; x < f.sites(); ++x) out[x] += eta * f[x];
    return out;
  };
  std::vector<double> inv;
  if (controls.preconditioner == Preconditioner::spectral_constant_coeff) {
    inv = shifted_symbol_norms(g, xi.values());
    for (auto& v : inv) v = 1.0 / (eta + Lambda * v);
    inv[0] = 0.0;
  }
  auto M = [&](const ComplexField& r) {
    if (inv.empty()) return project_zero_mean(r);
    return apply_fourier_multiplier(r, [&](std::size_t k) { return cplx(inv[k]); });
  };

  CorrectorSolution sol;
  sol.xi = xi;
  sol.eta = eta;
  for (int k = 0; k < d; ++k) {
    const auto col = twisted_adjoint(detail::coefficient_column(a, k), xi);
    ComplexField rhs = project_zero_mean(col);
    rhs *= -1.0;
    // For constant coefficients the projected right-hand side is pure roundoff.
    if (norm2(rhs) <= 1e-14 * norm2(col)) rhs = ComplexField(g, 1);
    ComplexField phi(g, 1);
    const auto rep = conjugate_gradient(A, M, rhs, phi, controls, "solve_corrector_direct");
    phi = project_zero_mean(std::move(phi));
    sol.iterations += rep.iterations;
    sol.residual = std::max(sol.residual, detail::corrector_residual(a, xi, eta, phi, k));
    sol.grad.push_back(twisted_gradient(phi, xi));
    sol.phi.push_back(std::move(phi));
  }
  return sol;
}

/// Fixed-point iteration grad_xi Phi_k <- P T[b (grad_xi Phi_k + e_k)], b = I - a / Lambda.
/// Stops when the increment falls below rel_tolerance relative to sqrt(N).
inline CorrectorSolution solve_corrector_neumann(const CoefficientField& a, const FourierPoint& xi, double eta,
                                                 int max_terms, const SolveControls& controls = {}) {
  check_eta(eta, "solve_corrector_neumann");
  controls.validate();
  if (max_terms < 1) throw InvalidArgument("solve_corrector_neumann: max_terms must be >= 1");
  const auto& g = a.grid();
  const int d = g.dim();
  if (xi.dim() != d) throw InvalidArgument("solve_corrector_neumann: xi dimension mismatch");
  const double Lambda = a.bounds.Lambda;
  const double scale = std::sqrt(static_cast<double>(g.size()));
  const double bound = a.bounds.contraction();

  // b(x) = I - a(x) / Lambda
  CoefficientField b = a;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (auto& v : b.a.component(i * d + j)) v = (i == j ? 1.0 : 0.0) - v / Lambda;

  const auto e = shifted_symbols(g, xi.values());
  const double s = eta / Lambda;

  CorrectorSolution sol;
  sol.xi = xi;
  sol.eta = eta;
  for (int k = 0; k < d; ++k) {
    ComplexField w(g, d);
    ComplexField rhs_spec(g, d);
    std::vector<double> incs;
    int stalled = 0;
    bool converged = false;
    for (int n = 0; n < max_terms; ++n) {
      rhs_spec = dft(apply_coefficient(b, detail::add_unit(w, k)));
      ComplexField next_spec(g, d);
      for (std::size_t z = 1; z < g.size(); ++z) {
        const cplx* ez = &e[z * static_cast<std::size_t>(d)];
        cplx proj = 0.0;
        double n2 = 0.0;
        for (int j = 0; j < d; ++j) {
          proj += std::conj(ez[j]) * rhs_spec(j, z);
          n2 += std::norm(ez[j]);
        }
        proj /= s + n2;
        for (int j = 0; j < d; ++j) next_spec(j, z) = ez[j] * proj;
      }
      ComplexField next = idft(std::move(next_spec));
      const double inc = norm2(next - w) / scale;
      w = std::move(next);
      incs.push_back(inc);
      ++sol.iterations;
      if (incs.size() >= 2) {
        const double ratio = inc / std::max(incs[incs.size() - 2], 1e-300);
        stalled = (ratio >= 1.0 && inc > controls.rel_tolerance) ? stalled + 1 : 0;
        if (stalled >= 3)
          throw ConvergenceError("solve_corrector_neumann: increments not contracting (ratio " + std::to_string(ratio) +
                                     ", bound " + std::to_string(bound) + "); ellipticity violated?",
                                 inc, sol.iterations);
      }
      if (inc <= controls.rel_tolerance) {
        converged = true;
        break;
      }
    }
    if (!converged)
      throw ConvergenceError("solve_corrector_neumann: increment above tolerance after " + std::to_string(max_terms) +
                                 " terms",
                             incs.back(), sol.iterations);
    // Phi from the converged right side: Phi^ = e^* g^ / (eta / Lambda + |e|^2), zero mode removed.
    rhs_spec = dft(apply_coefficient(b, detail::add_unit(w, k)));
    ComplexField phi_spec(g, 1);
    for (std::size_t z = 1; z < g.size(); ++z) {
      const cplx* ez = &e[z * static_cast<std::size_t>(d)];
      cplx proj = 0.0;
      double n2 = 0.0;
      for (int j = 0; j < d; ++j) {
        proj += std::conj(ez[j]) * rhs_spec(j, z);
        n2 += std::norm(ez[j]);
      }
      phi_spec[z] = proj / (s + n2);
    }
    ComplexField phi = idft(std::move(phi_spec));
    sol.residual = std::max(sol.residual, detail::corrector_residual(a, xi, eta, phi, k));
    sol.grad.push_back(std::move(w));
    sol.phi.push_back(std::move(phi));
    sol.increments.push_back(std::move(incs));
  }
  return sol;
}

}  // namespace hlab
