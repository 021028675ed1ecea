#pragma once

// Discrete Fourier pair on the torus with the sign convention
//
//   dft:  h^(zeta) = sum_x h(x) exp(+i x.zeta)
//   idft: h(x)     = N^{-1} sum_zeta h^(zeta) exp(-i x.zeta)
//
// where zeta runs over the dual lattice 2 pi k / L. Every module goes through
// these two functions; nobody else talks to FFTW.

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>
#include <vector>

#include "hlab/grid.hpp"

namespace hlab {

namespace detail {

class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  // In-place plan for one component of `grid`. Planning is serialized; the
  // returned plan is only ever used through the thread-safe new-array execute.
  fftw_plan plan(const TorusGrid& grid, int sign) {
    const auto key = std::make_tuple(grid.dim(), grid.side(), sign);
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<int> n(static_cast<std::size_t>(grid.dim()), grid.side());
    auto* buf = fftw_alloc_complex(grid.size());
    fftw_plan p = fftw_plan_dft(grid.dim(), n.data(), buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
    plans_.emplace(key, p);
    return p;
  }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

 private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [k, p] : plans_) fftw_destroy_plan(p);
  }
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

inline void transform_in_place(ComplexField& f, int sign) {
  fftw_plan p = FftPlanCache::instance().plan(f.grid(), sign);
  for (int c = 0; c < f.components(); ++c) {
    auto* ptr = reinterpret_cast<fftw_complex*>(f.component(c).data());
    fftw_execute_dft(p, ptr, ptr);
  }
}

}  // namespace detail

inline ComplexField dft(ComplexField f) {
  detail::transform_in_place(f, FFTW_BACKWARD);
  return f;
}
inline ComplexField dft(const RealField& f) { return dft(to_complex(f)); }

inline ComplexField idft(ComplexField f) {
  detail::transform_in_place(f, FFTW_FORWARD);
  f *= 1.0 / static_cast<double>(f.sites());
  return f;
}

/// Dual-lattice point for spectral index k, components 2 pi k_j / L in [-pi, pi).
inline std::vector<double> dual_point(const TorusGrid& grid, std::size_t k) {
  auto c = grid.centered(k);
  std::vector<double> zeta(c.size());
  for (std::size_t j = 0; j < c.size(); ++j)
    zeta[j] = 2.0 * std::numbers::pi * c[j] / grid.side();
  return zeta;
}

}  // namespace hlab
