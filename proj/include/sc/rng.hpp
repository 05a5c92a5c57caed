#pragma once

#include <cmath>
#include <cstdint>

#include "sc/error.hpp"

namespace sc {

// Counter-based generator (splitmix64 over an advancing counter).
// Every stochastic op takes an explicit stream; forking with a stream id
// gives an independent, reproducible sequence for the same root seed.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : counter_(mix(seed + 0x9E3779B97F4A7C15ULL) ^ mix(stream * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL)) {}

  uint64_t next_u64() {
    counter_ += 0x9E3779B97F4A7C15ULL;
    return mix(counter_);
  }

  // uniform in [0,1), 53-bit resolution
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float next_float() { return static_cast<float>(next_double()); }

  // uniform integer in [0,n); unbiased via rejection
  int uniform_int(int n) {
    if (n <= 0) throw Error("Rng::uniform_int: n must be positive");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return static_cast<int>(v % un);
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

  // Box-Muller; one draw per call keeps the stream consumption fixed
  float normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2));
  }

  // independent derived stream
  Rng fork(uint64_t stream) const {
    Rng r(0);
    r.counter_ = mix(counter_) ^ mix(stream * 0xD6E8FEB86659FD93ULL + 0x2545F4914F6CDD1DULL);
    return r;
  }

  uint64_t state() const { return counter_; }
  void set_state(uint64_t s) { counter_ = s; }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  uint64_t counter_;
};

}  // namespace sc
