#include "mi2v/rng.hpp"

#include <cmath>
#include <numbers>

#include "mi2v/error.hpp"

namespace mi2v {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
constexpr double kTwoPow53Inv = 1.0 / 9007199254740992.0;
}  // namespace

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return splitmix64_mix(seed_ + counter_ * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * kTwoPow53Inv; }

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, "Rng::below", "empty range");
  // Lemire's multiply-shift; the slight bias is irrelevant at our range sizes.
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

float Rng::normal() {
  const double u1 = static_cast<double>((next_u64() >> 11) + 1) * kTwoPow53Inv;
  const double u2 = static_cast<double>(next_u64() >> 11) * kTwoPow53Inv;
  ++normals_;
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return static_cast<float>(z);
}

Tensor random_normal(Rng& rng, const Dims& dims) {
  require(dims.size() <= kMaxRank, "random_normal", "rank " + std::to_string(dims.size()) + " exceeds 5");
  Tensor out(dims);
  for (auto& v : out.values()) v = rng.normal();
  return out;
}

}  // namespace mi2v
