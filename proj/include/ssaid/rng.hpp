#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace ssaid {

/// Identifies which distribution a stream feeds. Values are part of the
/// on-disk determinism contract and must not be renumbered.
enum class StreamTag : std::uint64_t {
  upper = 1,        // xi_k ~ D_f
  lower_grad = 2,   // pi_k ~ D_g
  jacobian = 3,     // zeta_k ~ D_g
  hessian = 4,      // zeta'_k ~ D_g
  problem = 5,      // problem generation
  replication = 6,  // Monte-Carlo branch seeds
  auxiliary = 7,    // test data, random sequences
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                    std::uint64_t b = 0,
                                    std::uint64_t c = 0) noexcept {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ a);
  h = mix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = mix64(h ^ (c + 0x85157af5ULL));
  return h;
}

/// Counter-based random stream keyed by (seed, iteration, tag, sub-index).
///
/// Streams with distinct keys are statistically independent, and a stream
/// depends only on its key, so any iteration can be replayed without
/// re-running the ones before it. Satisfies UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t seed, std::uint64_t k, StreamTag tag,
         std::uint64_t sub = 0) noexcept
      : state_(derive_seed(seed, k, static_cast<std::uint64_t>(tag), sub)) {}

  explicit Stream(std::uint64_t raw_state) noexcept : state_(raw_state) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double normal() {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(*this);
  }

 private:
  std::uint64_t state_;
};

}  // namespace ssaid
