#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace uwloc {

// splitmix64 step; used both as a stand-alone mixer and to expand seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ with deterministic sub-stream derivation. A stream is
// identified by a master seed plus a path of integers (purpose, grid index,
// trial, ...); streams with distinct paths are independent for practical
// purposes and adding trials never perturbs earlier ones.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) { reseed(seed); }

  static RngStream derive(std::uint64_t master,
                          std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = master ^ 0x6a09e667f3bcc909ULL;
    for (std::uint64_t p : path) {
      h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      std::uint64_t s = h;
      h = splitmix64(s);
    }
    return RngStream(h);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller. Each call consumes exactly two uniforms,
  // so the draw sequence depends only on the call index.
  double next_normal() {
    double u1 = next_double();
    const double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  void reseed(std::uint64_t seed) {
    // Expand one 64-bit seed into the four-word state.
    for (auto& w : s_) w = splitmix64(seed);
    // xoshiro must not start from the all-zero state.
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
  }

  std::uint64_t s_[4]{};
};

}  // namespace uwloc
