#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace tta {

// Deterministic pseudo-random generator used everywhere randomness is needed.
//
// The core stream is SplitMix64 (Steele/Lea/Flood 2014): the state advances by
// the golden-ratio increment 0x9E3779B97F4A7C15 and each output is the
// finalizer mix of the new state. The raw 64-bit stream is identical across
// platforms for a given seed. Doubles derive from the top 53 bits, so they are
// platform-identical too. Normal deviates use Box-Muller and therefore depend
// on the libm rounding of log/cos/sin; on a fixed toolchain the full sequence
// is byte-stable.
//
// Substreams: fork(tag) and fork(tag, index) derive statistically independent
// child generators from the *construction* seed, regardless of how much of the
// parent stream has been consumed:
//   child_seed = mix64(seed ^ fnv1a64(tag) ^ (index + 1) * 0x9E3779B97F4A7C15)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ull;
    }
    return h;
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix64(state_);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller; deviates are produced in pairs and the
  // second one is cached.
  double next_normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1] so log(u1) is finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Uniform index in [0, n); rejection-sampled so every value is equally
  // likely. n must be > 0.
  std::size_t next_index(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::size_t>(v % bound);
  }

  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = next_index(i);
      std::swap(idx[i - 1], idx[j]);
    }
    return idx;
  }

  Rng fork(std::string_view tag, std::uint64_t index = 0) const {
    return Rng(derive_seed(seed_, tag, index));
  }

  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                   std::uint64_t index = 0) {
    return mix64(seed ^ fnv1a64(tag) ^ (index + 1) * 0x9E3779B97F4A7C15ull);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace tta
