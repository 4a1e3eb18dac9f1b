#pragma once

// xoshiro256** 1.0 (Blackman & Vigna), seeded through SplitMix64.
//
// Constants, for reimplementation in other languages:
//   SplitMix64: state += 0x9E3779B97F4A7C15;
//               z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//               z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//               return z ^ (z >> 31);
//   xoshiro256**: result = rotl(s1 * 5, 7) * 9;
//                 t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3;
//                 s2 ^= t; s3 = rotl(s3, 45);
//   uniform():  (next() >> 11) * 2^-53, in [0, 1)
//   normal():   Box-Muller, u1 = 1 - uniform(), u2 = uniform(),
//               sqrt(-2 ln u1) * cos(2 pi u2); one draw per call.
//   derive(seed, tags...): SplitMix64 state starts at seed; for each tag,
//               state = splitmix(state ^ tag); the generator is seeded
//               from that state.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace edloc {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class Xoshiro256ss {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256ss(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
  }

  // Independent generator keyed by a seed and a tag path.
  static Xoshiro256ss derive(std::uint64_t seed,
                             std::initializer_list<std::uint64_t> tags) {
    std::uint64_t state = seed;
    for (auto tag : tags) {
      state ^= tag;
      state = splitmix64(state);
    }
    return Xoshiro256ss(state);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() { return next(); }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // plain rejection sampling, unbiased
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
};

}  // namespace edloc
