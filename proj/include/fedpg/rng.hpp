#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <string_view>

namespace fedpg {

// Counter-based random streams.
//
// A stream is identified by a 64-bit key; the n-th output of the stream is
// mix(key + n * 0x9E3779B97F4A7C15) where mix is the SplitMix64 finalizer.
// Because the output depends only on (key, n), any number of streams can be
// derived independently of execution order, which is what makes serial and
// parallel schedules produce identical results.
//
// Keys are derived with derive_key(seed, tag, i, j, ...):
//   h = fnv1a64(tag); h = mix(h ^ seed); for each index x: h = mix(h ^ mix(x + 1))

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_key(std::uint64_t seed, std::string_view tag,
                                   std::initializer_list<std::uint64_t> idx = {}) noexcept {
  std::uint64_t h = mix64(fnv1a64(tag) ^ seed);
  for (std::uint64_t x : idx) h = mix64(h ^ mix64(x + 1));
  return h;
}

/// Keyed counter-based generator. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr explicit CounterRng(std::uint64_t key = 0) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(*this);
  }

  /// Index drawn from a probability row of length n (entries sum to 1).
  template <class Row>
  int categorical(const Row& probs, int n) noexcept {
    double u = uniform();
    double acc = 0.0;
    for (int i = 0; i < n - 1; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return n - 1;
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline CounterRng make_rng(std::uint64_t seed, std::string_view tag,
                           std::initializer_list<std::uint64_t> idx = {}) {
  return CounterRng(derive_key(seed, tag, idx));
}

}  // namespace fedpg
