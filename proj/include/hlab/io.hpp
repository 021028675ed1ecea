#pragma once

// Field serialization.
//
// Binary layout (little-endian throughout):
//
//   offset  size  content
//        0     5  magic "HLAB1"
//        5     1  value type: 0 = real, 1 = complex (re, im pairs)
//        6     8  kind tag, ASCII, NUL padded ("scalar", "vector", "matrix", "coef", ...)
//       14     4  dim      (uint32)
//       18     4  side     (uint32)
//       22     4  components per site (uint32)
//       26     8  seed     (uint64)
//       34     8  config hash (uint64)
//       42     -  float64 values in site order; per site all components,
//                 per component re then im when complex
//
// CSV: a '#' provenance line, a header row x_1..x_d,re,im (re_c,im_c per
// component when there is more than one), then one row per site with centered
// coordinates.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "hlab/grid.hpp"

namespace hlab {

static_assert(std::endian::native == std::endian::little, "hlab binary I/O assumes a little-endian host");

struct Provenance {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

struct FieldHeader {
  std::string kind;
  int dim = 0;
  int side = 0;
  int components = 0;
  bool is_complex = false;
  Provenance provenance;
};

inline constexpr char kFieldMagic[5] = {'H', 'L', 'A', 'B', '1'};
inline constexpr std::size_t kFieldHeaderBytes = 42;

namespace detail {
template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IntegrityError("field file truncated in header");
  return v;
}
inline void write_header(std::ostream& os, const FieldHeader& h) {
  if (h.kind.size() > 8) throw InvalidArgument("field kind tag longer than 8 bytes: " + h.kind);
  os.write(kFieldMagic, 5);
  put<std::uint8_t>(os, h.is_complex ? 1 : 0);
  char tag[8] = {};
  std::memcpy(tag, h.kind.data(), h.kind.size());
  os.write(tag, 8);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.dim));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.side));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.components));
  put<std::uint64_t>(os, h.provenance.seed);
  put<std::uint64_t>(os, h.provenance.config_hash);
}
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

template <class T>
void write_field(std::ostream& os, const Field<T>& f, const std::string& kind, Provenance prov = {}) {
  constexpr bool is_c = std::is_same_v<T, cplx>;
  detail::write_header(os, {kind, f.grid().dim(), f.grid().side(), f.components(), is_c, prov});
  for (std::size_t x = 0; x < f.sites(); ++x)
    for (int c = 0; c < f.components(); ++c) {
      if constexpr (is_c) {
        detail::put<double>(os, f(c, x).real());
        detail::put<double>(os, f(c, x).imag());
      } else {
        detail::put<double>(os, f(c, x));
      }
    }
  if (!os) throw std::runtime_error("write_field: stream failure");
}

template <class T>
void save_field(const std::string& path, const Field<T>& f, const std::string& kind, Provenance prov = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_field(os, f, kind, prov);
}

struct FieldFile {
  FieldHeader header;
  ComplexField values;

  RealField real() const {
    if (header.is_complex) throw IntegrityError("field file holds complex values, expected real");
    return real_part(values);
  }
};

/// Reads a field, validating magic, header sanity and payload size.
inline FieldFile read_field(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kFieldMagic, 5) != 0) throw IntegrityError("bad magic: not an HLAB1 field file");
  FieldHeader h;
  const auto type = detail::get<std::uint8_t>(is);
  if (type > 1) throw IntegrityError("bad value-type byte");
  h.is_complex = type == 1;
  char tag[9] = {};
  is.read(tag, 8);
  if (!is) throw IntegrityError("field file truncated in header");
  h.kind = tag;
  h.dim = static_cast<int>(detail::get<std::uint32_t>(is));
  h.side = static_cast<int>(detail::get<std::uint32_t>(is));
  h.components = static_cast<int>(detail::get<std::uint32_t>(is));
  h.provenance.seed = detail::get<std::uint64_t>(is);
  h.provenance.config_hash = detail::get<std::uint64_t>(is);
  if (h.dim < 1 || h.dim > 8 || h.side < 2 || h.side % 2 != 0 || h.components < 1 || h.components > 4096)
    throw IntegrityError("implausible field header");
  TorusGrid grid(h.dim, h.side);
  const std::size_t per = static_cast<std::size_t>(h.components) * (h.is_complex ? 2 : 1);
  if (grid.size() > (std::size_t{1} << 34) / per) throw IntegrityError("implausible field size");
  ComplexField values(grid, h.components);
  std::vector<double> buf(grid.size() * per);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (static_cast<std::size_t>(is.gcount()) != buf.size() * sizeof(double))
    throw IntegrityError("field payload truncated: expected " + std::to_string(buf.size() * 8) + " bytes");
  if (is.peek() != std::char_traits<char>::eof()) throw IntegrityError("trailing bytes after field payload");
  std::size_t p = 0;
  for (std::size_t x = 0; x < grid.size(); ++x)
    for (int c = 0; c < h.components; ++c) {
      const double re = buf[p++];
      const double im = h.is_complex ? buf[p++] : 0.0;
      values(c, x) = {re, im};
    }
  return {std::move(h), std::move(values)};
}

inline FieldFile load_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_field(is);
}

template <class T>
void write_field_csv(std::ostream& os, const Field<T>& f, const std::string& kind, Provenance prov = {}) {
  const auto& g = f.grid();
  os << "# hlab kind=" << kind << " seed=" << prov.seed << " config_hash=" << prov.config_hash << '\n';
  for (int i = 1; i <= g.dim(); ++i) os << "x_" << i << ',';
  for (int c = 0; c < f.components(); ++c) {
    if (f.components() == 1) os << "re,im";
    else os << "re_" << c << ",im_" << c;
    os << (c + 1 < f.components() ? "," : "");
  }
  os << '\n';
  for (std::size_t x = 0; x < f.sites(); ++x) {
    for (int v : g.centered(x)) os << v << ',';
    for (int c = 0; c < f.components(); ++c) {
      const cplx v{f(c, x)};
      os << detail::fmt_double(v.real()) << ',' << detail::fmt_double(v.imag());
      os << (c + 1 < f.components() ? "," : "");
    }
    os << '\n';
  }
}

}  // namespace hlab
