#pragma once

// Periodic lattice Z^d / L Z^d and fields stored on it.
//
// Sites are indexed row-major over the d-tuple (last coordinate fastest) with
// each coordinate in [0, L). Negative coordinates alias mod L; `centered`
// returns the representative in [-L/2, L/2).

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hlab/error.hpp"

namespace hlab {

using cplx = std::complex<double>;

class TorusGrid {
 public:
  TorusGrid(int dim, int side) : dim_(dim), side_(side) {
    if (dim < 1) throw InvalidArgument("TorusGrid: dim must be >= 1, got " + std::to_string(dim));
    if (side < 2 || side % 2 != 0)
      throw InvalidArgument("TorusGrid: side must be an even integer >= 2, got " +
                            std::to_string(side));
    size_ = 1;
    for (int i = 0; i < dim; ++i) size_ *= static_cast<std::size_t>(side);
    strides_.assign(static_cast<std::size_t>(dim), 1);
    for (int i = dim - 2; i >= 0; --i)
      strides_[static_cast<std::size_t>(i)] =
          strides_[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(side);
  }

  int dim() const noexcept { return dim_; }
  int side() const noexcept { return side_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t stride(int axis) const noexcept { return strides_[static_cast<std::size_t>(axis)]; }

  int wrap(long c) const noexcept {
    const long m = c % side_;
    return static_cast<int>(m < 0 ? m + side_ : m);
  }

  std::size_t index(std::span<const int> coords) const {
    if (static_cast<int>(coords.size()) != dim_)
      throw InvalidArgument("TorusGrid::index: coordinate count does not match dim");
    std::size_t idx = 0;
    for (int i = 0; i < dim_; ++i)
      idx += static_cast<std::size_t>(wrap(coords[static_cast<std::size_t>(i)])) * stride(i);
    return idx;
  }
  std::size_t index(std::initializer_list<int> coords) const {
    return index(std::span<const int>(coords.begin(), coords.size()));
  }

  int coord(std::size_t idx, int axis) const noexcept {
    return static_cast<int>((idx / stride(axis)) % static_cast<std::size_t>(side_));
  }

  std::vector<int> coords(std::size_t idx) const {
    std::vector<int> c(static_cast<std::size_t>(dim_));
    for (int i = 0; i < dim_; ++i) c[static_cast<std::size_t>(i)] = coord(idx, i);
    return c;
  }

  /// Coordinates mapped to [-L/2, L/2).
  std::vector<int> centered(std::size_t idx) const {
    auto c = coords(idx);
    for (auto& v : c)
      if (v >= side_ / 2) v -= side_;
    return c;
  }

  /// Euclidean norm of the centered coordinates.
  double distance(std::size_t idx) const {
    double s = 0.0;
    for (int v : centered(idx)) s += static_cast<double>(v) * v;
    return std::sqrt(s);
  }

  /// Index of idx + step * e_axis with periodic wraparound.
  std::size_t shift(std::size_t idx, int axis, int step) const noexcept {
    const int c = coord(idx, axis);
    const int n = wrap(static_cast<long>(c) + step);
    return idx + static_cast<std::size_t>(n) * stride(axis) - static_cast<std::size_t>(c) * stride(axis);
  }

  /// Index of a + b (lattice vector addition mod L).
  std::size_t add(std::size_t a, std::size_t b) const noexcept {
    std::size_t idx = 0;
    for (int i = 0; i < dim_; ++i)
      idx += static_cast<std::size_t>(wrap(static_cast<long>(coord(a, i)) + coord(b, i))) * stride(i);
    return idx;
  }

  /// Index of -a.
  std::size_t negate(std::size_t a) const noexcept {
    std::size_t idx = 0;
    for (int i = 0; i < dim_; ++i) idx += static_cast<std::size_t>(wrap(-static_cast<long>(coord(a, i)))) * stride(i);
    return idx;
  }

  friend bool operator==(const TorusGrid& a, const TorusGrid& b) noexcept {
    return a.dim_ == b.dim_ && a.side_ == b.side_;
  }

 private:
  int dim_;
  int side_;
  std::size_t size_;
  std::vector<std::size_t> strides_;
};

/// Multi-component field on a torus; storage is component-major
/// (all sites of component 0, then component 1, ...).
///
/// Scalar fields have one component, vector fields d, matrix fields d*d with
/// entry (i, j) at component i*d + j.
template <class T>
class Field {
 public:
  using value_type = T;

  explicit Field(TorusGrid grid, int components = 1, T fill = T{})
      : grid_(std::move(grid)), components_(components) {
    if (components < 1) throw InvalidArgument("Field: components must be >= 1");
    data_.assign(grid_.size() * static_cast<std::size_t>(components), fill);
  }

  const TorusGrid& grid() const noexcept { return grid_; }
  int components() const noexcept { return components_; }
  std::size_t sites() const noexcept { return grid_.size(); }

  std::span<T> component(int c) noexcept {
    return {data_.data() + static_cast<std::size_t>(c) * grid_.size(), grid_.size()};
  }
  std::span<const T> component(int c) const noexcept {
    return {data_.data() + static_cast<std::size_t>(c) * grid_.size(), grid_.size()};
  }

  T& operator()(int c, std::size_t site) noexcept {
    return data_[static_cast<std::size_t>(c) * grid_.size() + site];
  }
  const T& operator()(int c, std::size_t site) const noexcept {
    return data_[static_cast<std::size_t>(c) * grid_.size() + site];
  }
  T& operator[](std::size_t site) noexcept { return data_[site]; }
  const T& operator[](std::size_t site) const noexcept { return data_[site]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  Field& operator+=(const Field& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  template <class S>
  Field& operator*=(S s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }

  void check_same(const Field& o) const {
    if (!(grid_ == o.grid_) || components_ != o.components_)
      throw InvalidArgument("Field: shape mismatch");
  }

 private:
  TorusGrid grid_;
  int components_;
  std::vector<T> data_;
};

using RealField = Field<double>;
using ComplexField = Field<cplx>;

inline RealField make_scalar_field(const TorusGrid& g) { return RealField(g, 1); }
inline RealField make_vector_field(const TorusGrid& g) { return RealField(g, g.dim()); }
inline RealField make_matrix_field(const TorusGrid& g) { return RealField(g, g.dim() * g.dim()); }

inline ComplexField to_complex(const RealField& f) {
  ComplexField out(f.grid(), f.components());
  for (std::size_t i = 0; i < f.data().size(); ++i) out.data()[i] = f.data()[i];
  return out;
}

inline RealField real_part(const ComplexField& f) {
  RealField out(f.grid(), f.components());
  for (std::size_t i = 0; i < f.data().size(); ++i) out.data()[i] = f.data()[i].real();
  return out;
}

namespace detail {
inline double conj_mul(double a, double b) { return a * b; }
inline cplx conj_mul(const cplx& a, const cplx& b) { return std::conj(a) * b; }
}  // namespace detail

/// <f, g> = sum over sites and components of conj(f) g.
template <class T>
T inner(const Field<T>& f, const Field<T>& g) {
  f.check_same(g);
  T s{};
  for (std::size_t i = 0; i < f.data().size(); ++i) s += detail::conj_mul(f.data()[i], g.data()[i]);
  return s;
}

template <class T>
double norm2(const Field<T>& f) {
  double s = 0.0;
  for (const auto& v : f.data()) s += std::norm(v);
  return std::sqrt(s);
}

/// Spatial mean of one component.
template <class T>
T mean(const Field<T>& f, int c = 0) {
  T s{};
  for (const auto& v : f.component(c)) s += v;
  return s / static_cast<double>(f.sites());
}

/// Field translated so that out(x) = f(x + y).
template <class T>
Field<T> translate(const Field<T>& f, std::size_t y) {
  Field<T> out(f.grid(), f.components());
  const auto& g = f.grid();
  for (int c = 0; c < f.components(); ++c)
    for (std::size_t x = 0; x < f.sites(); ++x) out(c, x) = f(c, g.add(x, y));
  return out;
}

}  // namespace hlab
