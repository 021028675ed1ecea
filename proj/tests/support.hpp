#pragma once

#include <gtest/gtest.h>

#include "hlab/hlab.hpp"
#include "hlab/verification/oracles.hpp"

namespace hlab::test {

inline RealField random_real(const TorusGrid& g, int comps, std::uint64_t seed) {
  CounterRng rng(seed, 99);
  RealField f(g, comps);
  for (auto& v : f.data()) v = rng.next_normal();
  return f;
}

inline ComplexField random_complex(const TorusGrid& g, int comps, std::uint64_t seed) {
  CounterRng rng(seed, 98);
  ComplexField f(g, comps);
  for (auto& v : f.data()) v = {rng.next_normal(), rng.next_normal()};
  return f;
}

inline double max_abs_diff(const RealField& a, const RealField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double max_abs_diff(const ComplexField& a, const ComplexField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace hlab::test
