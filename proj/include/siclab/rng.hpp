#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace siclab {

// Deterministic seeded RNG with self-contained distributions. All sampling
// goes through this class so that identical seeds reproduce identical streams
// bit for bit, independent of the standard library implementation.
//
// Core generator: xoshiro256++ seeded via splitmix64. Substreams are derived
// from the root seed and a stream index, so datasets can be regenerated
// sample by sample or in parallel without changing the result.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection keeps the draw unbiased for any n.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller. No caching: one draw consumes two
  // uniforms, keeping the stream position a pure function of the draw count.
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double gaussian(double mean, double var) { return mean + std::sqrt(var) * gaussian(); }

  // Poisson draw. Knuth's product method for small rates; larger rates are
  // split into independent chunks (sums of Poissons are Poisson), which stays
  // exact and deterministic.
  long poisson(double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("poisson: rate must be >= 0");
    long total = 0;
    while (lambda > 30.0) {
      total += poisson_knuth(30.0);
      lambda -= 30.0;
    }
    return total + poisson_knuth(lambda);
  }

  // Independent substream derived from the root seed and an index.
  Rng substream(std::uint64_t index) const {
    std::uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL + index * 0xBF58476D1CE4E5B9ULL);
    return Rng(splitmix64(x));
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  long poisson_knuth(double lambda) {
    const double limit = std::exp(-lambda);
    long k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  std::uint64_t seed_;
  std::uint64_t state_[4];
};

}  // namespace siclab
