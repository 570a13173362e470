#pragma once

#include <cstdint>

#include "mi2v/tensor.hpp"

namespace mi2v {

// Counter-based generator. Word i of the stream is splitmix64(seed + (i+1)*0x9E3779B97F4A7C15),
// i.e. the SplitMix64 finalizer applied to a Weyl sequence. The state is just
// (seed, counter), so a stream can be reproduced or forked from any position.
//
// Normal variates use two consecutive words (u1, u2):
//   u1 = ((w1 >> 11) + 1) * 2^-53   in (0, 1]
//   u2 =  (w2 >> 11)      * 2^-53   in [0, 1)
//   z  = sqrt(-2 ln u1) * cos(2 pi u2)      evaluated in double,
// then rounded to float with round-to-nearest-even.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  float normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  // Words consumed so far.
  std::uint64_t counter() const { return counter_; }
  // Count of normal variates drawn so far (two words each).
  std::uint64_t normals_drawn() const { return normals_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::uint64_t normals_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

// Tensor of shape `dims` filled with standard normals drawn in row-major order.
Tensor random_normal(Rng& rng, const Dims& dims);

}  // namespace mi2v
