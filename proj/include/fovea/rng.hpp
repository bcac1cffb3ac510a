#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace fovea {

// splitmix64 finalizer; used to derive well-mixed per-record seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for the i-th independent stream of a run. Streams are order-free:
// record i always sees the same draws no matter which worker handles it.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return mix64(base ^ mix64(index + 1));
}

// mt19937_64 core with hand-rolled output transforms. The engine sequence is
// pinned by the standard; std::*_distribution is not, so we avoid it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be > 0");
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    return lo + static_cast<int>(uniform_index(
                    static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // standard normal via Box-Muller; one value per call, no cached spare so
  // the stream layout stays position-independent
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fovea
