#pragma once

#include <cstdint>
#include <random>

namespace dmlt {

// Deterministic draws layered over mt19937; distributions are hand-rolled so
// sequences are pinned by this code, not by the standard library vendor.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)};
    gen_.seed(seq);
  }

  uint32_t next() { return gen_(); }

  // uniform in [0,1) with 24 bits of mantissa
  float uniform() { return static_cast<float>(gen_() >> 8) * (1.0f / 16777216.0f); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, bound); deterministic, bias negligible for our sizes
  uint32_t below(uint32_t bound) { return bound == 0 ? 0 : gen_() % bound; }

 private:
  std::mt19937 gen_;
};

// Mixes a base seed with a stream index (epoch, step, ...) for derived rngs.
inline uint64_t mixSeed(uint64_t seed, uint64_t stream) {
  uint64_t x = seed ^ (stream + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  return x;
}

}  // namespace dmlt
