// Self-contained deterministic random number generation (xoshiro256++).
// The standard <random> distributions are implementation-defined, so every
// seeded code path in the engine draws through this generator to keep
// replays bitwise stable across builds and platforms.
#pragma once

#include <cstdint>
#include <cmath>
#include <span>
#include <vector>

namespace ustream {

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace detail

class Rng {
 public:
  explicit Rng(uint64_t seed = 1) {
    uint64_t sm = seed;
    for (auto& w : s_) w = detail::splitmix64(sm);
    spare_valid_ = false;
  }

  uint64_t next_u64() {
    const uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Standard normal via the polar method; the rejection loop and the cached
  // spare keep the stream deterministic.
  double normal() {
    if (spare_valid_) {
      spare_valid_ = false;
      return spare_;
    }
    double u, v, q;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      q = u * u + v * v;
    } while (q >= 1.0 || q == 0.0);
    const double f = std::sqrt(-2.0 * std::log(q) / q);
    spare_ = v * f;
    spare_valid_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Index draw from normalized weights (linear scan; callers with large
  // support should precompute a cumulative table and use pick_cumulative).
  size_t pick(std::span<const double> weights) {
    double u = uniform01();
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  size_t pick_cumulative(std::span<const double> cumulative) {
    const double u = uniform01() * (cumulative.empty() ? 1.0 : cumulative.back());
    size_t lo = 0, hi = cumulative.size();
    while (lo < hi) {
      const size_t mid = (lo + hi) / 2;
      if (cumulative[mid] <= u) lo = mid + 1; else hi = mid;
    }
    return lo < cumulative.size() ? lo : cumulative.size() - 1;
  }

  // Derives an independent deterministic stream, e.g. one per object or per
  // benchmark window.
  Rng fork(uint64_t stream_id) {
    uint64_t mix = s_[0] ^ detail::rotl(stream_id + 0x9e3779b97f4a7c15ull, 31);
    return Rng(mix ^ (stream_id * 0xda942042e4dd58b5ull));
  }

 private:
  uint64_t s_[4];
  double spare_ = 0.0;
  bool spare_valid_ = false;
};

}  // namespace ustream
