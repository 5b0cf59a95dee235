#pragma once

#include <cstdint>

namespace bwft {

/// Counter-based generator: the i-th draw is a pure function of (key, i),
/// so a stream can be reproduced or forked without hidden state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 24 bits of mantissa.
  float uniform();
  float uniform(float lo, float hi);
  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform_double();
  /// Standard normal via Box-Muller.
  float normal();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Independent generator for a named sub-stream of the same seed.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace bwft
