#pragma once

// Seeded, splittable random streams. Every generator in the library is a
// pure function of (seed, purpose tag, stream index), so replicate streams
// are independent and runs are reproducible bit-for-bit.

#include <cstdint>
#include <cmath>
#include <string_view>

namespace transduct {

namespace detail {

// SplitMix64 finalizer (Stafford mix13). Used both to derive stream keys
// and to seed the xoshiro state.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

// Derives an independent child seed, e.g. one per problem instance.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t state = seed ^ (index * 0x9e3779b97f4a7c15ULL);
  return detail::splitmix64(state);
}

// xoshiro256++ with state derived from (seed, purpose, index) via SplitMix64.
// Self-contained so that sampled values do not depend on the standard
// library's distribution implementations.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
    std::uint64_t key = seed;
    key = detail::splitmix64(key) ^ detail::fnv1a64(purpose);
    key = detail::splitmix64(key) ^ (index * 0x9e3779b97f4a7c15ULL);
    std::uint64_t sm = detail::splitmix64(key);
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // Uniform on (0, 1]; never returns 0 so log() below is safe.
  double next_uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller, caching the second draw.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, bound) by rejection (unbiased).
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t threshold = (0ULL - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

 private:
  std::uint64_t state_[4] = {};
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace transduct
