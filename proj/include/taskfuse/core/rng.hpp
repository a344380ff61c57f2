#pragma once

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

namespace taskfuse {

// 64-bit FNV-1a. Used for stream derivation and config hashing.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic generator with hand-rolled distributions so identical seeds
// give identical streams regardless of the standard library in use.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    state_ = seed;
    // xoshiro256** init from splitmix
    for (auto& w : s_) w = (state_ = splitmix64(state_));
    have_gauss_ = false;
  }

  std::uint64_t next_u64() {
    auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
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

  // uniform in [0,1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // standard normal via Box-Muller
  double normal() {
    if (have_gauss_) {
      have_gauss_ = false;
      return gauss_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    gauss_ = r * std::sin(a);
    have_gauss_ = true;
    return r * std::cos(a);
  }

  // Independent child stream for a named component.
  Rng derive(std::string_view tag) const {
    return Rng(splitmix64(state_ ^ fnv1a64(tag)));
  }

private:
  std::uint64_t state_ = 0;
  std::uint64_t s_[4] = {};
  bool have_gauss_ = false;
  double gauss_ = 0.0;
};

}  // namespace taskfuse
