#pragma once

// Difference operators on the torus, the symbol e(xi), and the
// constant-coefficient resolvent kernel G_eta = (eta + grad^* grad)^{-1} delta.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "hlab/fft.hpp"
#include "hlab/grid.hpp"

namespace hlab {

/// Smallest admissible eta for any solve; the torus zero mode makes eta = 0 singular.
inline constexpr double kEtaFloor = 1e-8;

inline void check_eta(double eta, const char* who) {
  if (!(eta >= kEtaFloor))
    throw InvalidArgument(std::string(who) + ": eta must be >= " + std::to_string(kEtaFloor) +
                          ", got " + std::to_string(eta));
}

/// Wave vector xi in [-pi, pi]^d.
class FourierPoint {
 public:
  FourierPoint() = default;
  explicit FourierPoint(std::vector<double> xi) : xi_(std::move(xi)) {
    constexpr double pi = std::numbers::pi;
    for (double v : xi_)
      if (!(v >= -pi - 1e-12 && v <= pi + 1e-12))
        throw InvalidArgument("FourierPoint: component " + std::to_string(v) + " outside [-pi, pi]");
  }
  static FourierPoint zero(int dim) { return FourierPoint(std::vector<double>(static_cast<std::size_t>(dim), 0.0)); }

  int dim() const noexcept { return static_cast<int>(xi_.size()); }
  double operator[](int j) const noexcept { return xi_[static_cast<std::size_t>(j)]; }
  const std::vector<double>& values() const noexcept { return xi_; }
  double norm() const {
    double s = 0.0;
    for (double v : xi_) s += v * v;
    return std::sqrt(s);
  }

 private:
  std::vector<double> xi_;
};

/// e_j(xi) = exp(-i xi_j) - 1.
inline std::vector<cplx> symbol_e(std::span<const double> xi) {
  std::vector<cplx> e(xi.size());
  for (std::size_t j = 0; j < xi.size(); ++j) e[j] = std::polar(1.0, -xi[j]) - 1.0;
  return e;
}
inline std::vector<cplx> symbol_e(const FourierPoint& xi) { return symbol_e(xi.values()); }

/// |e(xi)|^2 = sum_j 2 (1 - cos xi_j).
inline double symbol_e_norm2(std::span<const double> xi) {
  double s = 0.0;
  for (double v : xi) s += 2.0 * (1.0 - std::cos(v));
  return s;
}

namespace detail {
inline void require_scalar(int components, const char* who) {
  if (components != 1) throw InvalidArgument(std::string(who) + ": expected a scalar field");
}
inline void require_vector(int components, int dim, const char* who) {
  if (components != dim) throw InvalidArgument(std::string(who) + ": expected a d-component vector field");
}
}  // namespace detail

/// (grad f)_i(x) = f(x + e_i) - f(x).
template <class T>
Field<T> forward_gradient(const Field<T>& f) {
  detail::require_scalar(f.components(), "forward_gradient");
  const auto& g = f.grid();
  Field<T> out(g, g.dim());
  for (int i = 0; i < g.dim(); ++i)
    for (std::size_t x = 0; x < g.size(); ++x) out(i, x) = f[g.shift(x, i, +1)] - f[x];
  return out;
}

/// (grad^* g)(x) = sum_i [g_i(x - e_i) - g_i(x)].
template <class T>
Field<T> adjoint_gradient(const Field<T>& v) {
  const auto& g = v.grid();
  detail::require_vector(v.components(), g.dim(), "adjoint_gradient");
  Field<T> out(g, 1);
  for (int i = 0; i < g.dim(); ++i)
    for (std::size_t x = 0; x < g.size(); ++x) out[x] += v(i, g.shift(x, i, -1)) - v(i, x);
  return out;
}

/// (grad_xi f)_j(x) = exp(-i xi_j) f(x + e_j) - f(x).
inline ComplexField twisted_gradient(const ComplexField& f, const FourierPoint& xi) {
  detail::require_scalar(f.components(), "twisted_gradient");
  const auto& g = f.grid();
  if (xi.dim() != g.dim()) throw InvalidArgument("twisted_gradient: xi dimension mismatch");
  ComplexField out(g, g.dim());
  for (int j = 0; j < g.dim(); ++j) {
    const cplx phase = std::polar(1.0, -xi[j]);
    for (std::size_t x = 0; x < g.size(); ++x) out(j, x) = phase * f[g.shift(x, j, +1)] - f[x];
  }
  return out;
}

/// (grad_xi^* v)(x) = sum_j [exp(+i xi_j) v_j(x - e_j) - v_j(x)].
inline ComplexField twisted_adjoint(const ComplexField& v, const FourierPoint& xi) {
  const auto& g = v.grid();
  detail::require_vector(v.components(), g.dim(), "twisted_adjoint");
  if (xi.dim() != g.dim()) throw InvalidArgument("twisted_adjoint: xi dimension mismatch");
  ComplexField out(g, 1);
  for (int j = 0; j < g.dim(); ++j) {
    const cplx phase = std::polar(1.0, xi[j]);
    for (std::size_t x = 0; x < g.size(); ++x) out[x] += phase * v(j, g.shift(x, j, -1)) - v(j, x);
  }
  return out;
}

/// Multiply every spectral coefficient of every component by m(k), k the
/// dual-lattice index, and transform back.
template <class Multiplier>
ComplexField apply_fourier_multiplier(const ComplexField& f, Multiplier&& m) {
  ComplexField spec = dft(f);
  for (std::size_t k = 0; k < spec.sites(); ++k) {
    const cplx factor = m(k);
    for (int c = 0; c < spec.components(); ++c) spec(c, k) *= factor;
  }
  return idft(std::move(spec));
}

/// |e(zeta_k + xi)|^2 for every dual-lattice index k.
inline std::vector<double> shifted_symbol_norms(const TorusGrid& g, std::span<const double> xi) {
  std::vector<double> out(g.size());
  std::vector<double> z(static_cast<std::size_t>(g.dim()));
  for (std::size_t k = 0; k < g.size(); ++k) {
    for (int j = 0; j < g.dim(); ++j)
      z[static_cast<std::size_t>(j)] = 2.0 * std::numbers::pi * g.coord(k, j) / g.side() +
                                       (xi.empty() ? 0.0 : xi[static_cast<std::size_t>(j)]);
    out[k] = symbol_e_norm2(z);
  }
  return out;
}

/// Torus solution of eta G + grad^* grad G = delta_0 by spectral division.
inline RealField constant_coeff_green(double eta, const TorusGrid& grid) {
  if (!(eta > 0.0)) throw InvalidArgument("constant_coeff_green: eta must be > 0");
  check_eta(eta, "constant_coeff_green");
  const auto e2 = shifted_symbol_norms(grid, {});
  ComplexField spec(grid, 1);
  for (std::size_t k = 0; k < grid.size(); ++k) spec[k] = 1.0 / (eta + e2[k]);
  return real_part(idft(std::move(spec)));
}

}  // namespace hlab
