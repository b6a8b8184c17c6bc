#pragma once
#include <cmath>
#include <cstdint>

namespace ratekit {

// Counter-based random stream: the i-th output is the splitmix64 mix of
// (seed + i * golden gamma).  State is just (seed, counter), so streams are
// cheap to fork per walker, trivial to checkpoint, and every draw is
// reproducible independently of thread scheduling.
//
// Normal deviates use the Marsaglia polar method; the second value of each
// accepted pair is discarded so that one call consumes a deterministic,
// self-contained run of uniforms.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(uint64_t seed, uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  uint64_t next_u64() {
    uint64_t z = seed_ + (++counter_) * kGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    uint64_t bound = UINT64_MAX - UINT64_MAX % static_cast<uint64_t>(n);
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= bound);
    return static_cast<int>(v % static_cast<uint64_t>(n));
  }

  // Standard normal draw (polar method, spare discarded).
  double normal() {
    for (;;) {
      double a = 2.0 * uniform() - 1.0;
      double b = 2.0 * uniform() - 1.0;
      double s = a * a + b * b;
      if (s > 0.0 && s < 1.0) return a * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Independent substream for (this stream, key).
  RngStream derive(uint64_t key) const {
    return RngStream(mix(seed_ ^ mix(key + 0x632BE59BD9B4E019ull)));
  }
  RngStream derive(uint64_t k1, uint64_t k2) const { return derive(k1).derive(k2); }

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

  static uint64_t mix(uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  static constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  uint64_t seed_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace ratekit
