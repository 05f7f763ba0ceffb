#pragma once

// Portable seeded randomness and synthetic decode query streams.
//
// Generator: SplitMix64. state += 0x9E3779B97F4A7C15, then
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   out = z ^ (z >> 31)
// uniform():  (out >> 11) * 2^-53, in [0, 1)
// gaussian(): Box-Muller on two consecutive draws u1, u2:
//   sqrt(-2 ln(1 - u1)) * cos(2 pi u2); the sine branch is discarded.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "pnmkv/attention_core.hpp"

namespace pnmkv {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double gaussian() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  Vector gaussian_vector(std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = gaussian();
    return v;
  }

 private:
  std::uint64_t state_;
};

// Independent sub-stream seeds derived from one experiment seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  SplitMix64 g(seed ^ (salt * 0xD1B54A32D192ED03ULL));
  return g.next();
}

struct QueryStream {
  std::uint64_t seed = 0;
  std::uint64_t length = 0;
  double locality = 0.95;  // weight on the previous query
  double drift = 1.0;      // scale of the fresh component
};

inline void normalize(Vector& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (n2 == 0.0) return;
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& x : v) x *= inv;
}

// q_{t+1} = locality * q_t + (1 - locality) * drift * fresh, renormalized.
inline std::vector<Vector> gen_stream(const QueryStream& params, std::size_t d_h) {
  std::vector<Vector> out;
  out.reserve(params.length);
  if (params.length == 0) return out;
  SplitMix64 rng(params.seed);
  Vector q = rng.gaussian_vector(d_h);
  normalize(q);
  out.push_back(q);
  for (std::uint64_t t = 1; t < params.length; ++t) {
    const Vector fresh = rng.gaussian_vector(d_h);
    const double mix = (1.0 - params.locality) * params.drift;
    // Without a fresh component the direction is fixed; skip the
    // renormalization so the stream repeats bit for bit.
    if (mix != 0.0) {
      for (std::size_t j = 0; j < d_h; ++j) q[j] = params.locality * q[j] + mix * fresh[j];
      normalize(q);
    }
    out.push_back(q);
  }
  return out;
}

}  // namespace pnmkv
