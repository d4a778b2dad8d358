#pragma once

#include <cstdint>

#include "mbrw/cone.hpp"

namespace mbrw {

/// splitmix64 step; used for seeding and for deriving per-replica streams.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256** generator. Hand-rolled distributions keep every draw
/// bit-reproducible across compilers and platforms.
///
/// Stream derivation is frozen as a compatibility promise: the four words of
/// state are successive splitmix64 outputs of
///   key = master_seed XOR splitmix64(stream_id + 1).
class Rng {
 public:
  Rng(uint64_t master_seed, uint64_t stream_id) {
    uint64_t pre = stream_id + 1;
    uint64_t key = master_seed ^ splitmix64(pre);
    for (auto& word : s_) word = splitmix64(key);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Index i with probability cdf[i] - cdf[i-1]; cdf[n-1] must be ~1.
  int discrete_cdf(const double* cdf, int n) {
    const double u = uniform01();
    for (int i = 0; i + 1 < n; ++i) {
      if (u < cdf[i]) return i;
    }
    return n - 1;
  }

  /// Poisson by CDF inversion; suitable for the desk-scale means used here.
  /// Draws beyond `cap` raise instead of truncating silently.
  int poisson(double mean, int cap = 1'000'000) {
    const double u = uniform01();
    double p = std::exp(-mean);
    double acc = p;
    int k = 0;
    while (u >= acc) {
      ++k;
      if (k > cap) throw MathError("poisson draw exceeded cap");
      p *= mean / k;
      acc += p;
      if (p < 1e-300 && acc < u) throw MathError("poisson inversion underflow");
    }
    return k;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

/// Uniform direction on the simplex (normalized i.i.d. exponentials).
inline Direction random_direction(int d, Rng& rng) {
  double c[kMaxDim];
  double total = 0.0;
  for (int i = 0; i < d; ++i) {
    c[i] = -std::log(1.0 - rng.uniform01());
    total += c[i];
  }
  for (int i = 0; i < d; ++i) c[i] /= total;
  return direction_unchecked(c, d);
}

}  // namespace mbrw
