#pragma once
#include <cmath>
#include <cstdint>

namespace dpgcd {

// splitmix64: state += golden ratio, then xor-shift-multiply finalizer.
// One fixed generator for every random draw in the project so that
// (seed, config) -> output is identical across platforms and builds.
struct Prng {
  uint64_t state = 0;

  Prng() = default;
  explicit Prng(uint64_t seed) : state(seed) {}

  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  uint64_t next_u64() {
    state += 0x9E3779B97F4A7C15ULL;
    return mix(state);
  }

  // Independent stream per sample id: jump the base seed by the mixed id.
  // Scheduling order never matters as long as ids are stable.
  static Prng derive(uint64_t seed, uint64_t stream) {
    return Prng(seed ^ mix(stream + 0x9E3779B97F4A7C15ULL));
  }

  double unit() { return (double)(next_u64() >> 11) * 0x1.0p-53; }  // [0,1)

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + (int)(unit() * (double)(hi - lo + 1));
  }

  bool bernoulli(double p) { return unit() < p; }

  double normal(double mu = 0.0, double sigma = 1.0) {
    if (have_cached_) {
      have_cached_ = false;
      return mu + sigma * cached_;
    }
    double u1 = 1.0 - unit();  // (0,1], keeps log finite
    double u2 = unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.28318530717958647692528676655900577 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return mu + sigma * r * std::cos(a);
  }

 private:
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace dpgcd
