#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter), so a Monte Carlo sample is reproducible regardless
// of which thread produced it or in what order samples were scheduled.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace hlab {

/// Philox4x32-10 block function (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) noexcept {
    ctr = round(ctr, key);
    for (int r = 1; r < 10; ++r) {
      key[0] += kW0;
      key[1] += kW1;
      ctr = round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static constexpr Counter round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// SplitMix64 finalizer; used to derive stream identifiers.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// A keyed, splittable stream of 64-bit random words.
///
/// Random access (`bits`, `uniform`) and sequential access (`next_*`) read the
/// same underlying sequence; sequential access simply walks the index.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Child stream; distinct tags give statistically independent streams.
  CounterRng substream(std::uint64_t tag) const noexcept {
    return CounterRng(seed_, mix64(stream_ ^ mix64(tag + 0x632BE59BD9B4E019ull)));
  }

  std::uint64_t bits(std::uint64_t index) const noexcept {
    const std::uint64_t block = index >> 1;
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block),
                                  static_cast<std::uint32_t>(block >> 32),
                                  static_cast<std::uint32_t>(stream_),
                                  static_cast<std::uint32_t>(stream_ >> 32)};
    const Philox4x32::Key key{static_cast<std::uint32_t>(seed_),
                              static_cast<std::uint32_t>(seed_ >> 32)};
    const auto out = Philox4x32::generate(ctr, key);
    return (index & 1u) ? (std::uint64_t{out[3]} << 32 | out[2])
                        : (std::uint64_t{out[1]} << 32 | out[0]);
  }

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t index) const noexcept {
    return (static_cast<double>(bits(index) >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t next_u64() noexcept { return bits(position_++); }
  double next_uniform() noexcept { return uniform(position_++); }

  /// Standard normal via Box-Muller; consumes two words per pair of draws.
  double next_normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  std::uint64_t position() const noexcept { return position_; }

  // UniformRandomBitGenerator
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept { return next_u64(); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t position_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stream tags for the separate consumers of one (seed, sample) pair.
namespace stream_tag {
inline constexpr std::uint64_t kCoefficients = 1;
inline constexpr std::uint64_t kMcmc = 2;
inline constexpr std::uint64_t kSources = 3;
inline constexpr std::uint64_t kBootstrap = 4;
inline constexpr std::uint64_t kTestData = 5;
}  // namespace stream_tag

/// Stream for Monte Carlo sample `index` under master `seed`, for one consumer.
inline CounterRng sample_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t tag) {
  return CounterRng(seed).substream(tag).substream(index);
}

}  // namespace hlab
