#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace circuitscope {

// splitmix64: tiny, fast, well-mixed, and — unlike std::normal_distribution —
// byte-for-byte reproducible across standard libraries. Every artifact byte
// in the pipeline traces back through this generator.
struct SplitMix64 {
  std::uint64_t state = 0;

  explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53 mantissa bits
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1] — safe as a log() argument
  double uniform_pos() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  // Box–Muller, cosine branch only. Consumes exactly two uniforms per call and
  // caches nothing, so the stream position is a pure function of call count.
  double gaussian() {
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Seed discipline: every random draw traces to (master seed, stage label,
// entity id). No global mutable randomness anywhere.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t entity = 0) {
  SplitMix64 g(master ^ fnv1a64(label));
  std::uint64_t s = g.next();
  g.state = s + entity * 0x9e3779b97f4a7c15ull;
  return g.next();
}

}  // namespace circuitscope
