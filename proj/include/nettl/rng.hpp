#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "nettl/types.hpp"

namespace nettl {

// SplitMix64 finalizer. Used to derive independent substreams from a master
// seed so that parallel work items get decorrelated, reproducible generators.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t a) {
  return mix64(seed ^ mix64(a));
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return substream(substream(seed, a), b);
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                               std::uint64_t c) {
  return substream(substream(seed, a, b), c);
}

// Seeded generator with portable uniform/gaussian draws. mt19937_64 output is
// fully specified by the standard; uniforms and Box-Muller are implemented
// here so sequences do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on (0, 1].
  double uniform() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.gaussian();
  return m;
}

// Flat +-1/sqrt(d) vector; spikiness-free direction for planted structure.
inline Vector sign_vector(Index d, Rng& rng) {
  Vector v(d);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index i = 0; i < d; ++i) v(i) = rng.uniform() < 0.5 ? -s : s;
  return v;
}

} // namespace nettl
