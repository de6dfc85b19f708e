#pragma once

#include <cstdint>
#include <random>

namespace noah {

// Deterministic random source. Wraps std::mt19937_64 (whose output sequence
// is fixed by the standard) and derives floats from raw 64-bit draws instead
// of std::uniform_real_distribution, whose output is implementation-defined.
// Identical seeds therefore produce identical streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  float uniform_float(float lo, float hi) {
    return static_cast<float>(uniform(lo, hi));
  }

  // Uniform integer in [0, n). Modulo bias is below 2^-50 for the small n
  // used here (jitter offsets, index draws).
  int below(int n) { return static_cast<int>(next() % static_cast<std::uint64_t>(n)); }

 private:
  std::mt19937_64 gen_;
};

// Derives an independent stream seed from a master seed (splitmix64 finalizer
// over seed xor a stream tag). Used to give the backbone, head, and dataset
// their own streams without correlated draws.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace noah
