#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "core/common.h"

namespace avfuse {

// Deterministic RNG used everywhere. Streams for data, masks, and init are
// derived from (seed, salt words) so that any step of a run can be
// regenerated independently, which is what makes checkpoint resume exact.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return std::generate_canonical<double, 53>(engine_);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  index_t uniform_int(index_t n) {
    return static_cast<index_t>(engine_() % static_cast<uint64_t>(n));
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  // Normal resampled until within two standard deviations (ViT-style init).
  double truncated_normal(double stddev) {
    for (;;) {
      double v = normal(0.0, stddev);
      if (v >= -2.0 * stddev && v <= 2.0 * stddev) return v;
    }
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<index_t> permutation(index_t n) {
    std::vector<index_t> p(static_cast<size_t>(n));
    for (index_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (index_t i = n - 1; i > 0; --i) {
      index_t j = uniform_int(i + 1);
      std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
  }

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

// Mixes a base seed with salt words into an independent stream seed.
uint64_t derive_seed(uint64_t seed, uint64_t salt_a, uint64_t salt_b = 0);

}  // namespace avfuse
