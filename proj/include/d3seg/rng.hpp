#pragma once

#include <cstdint>

namespace d3seg {

/// SplitMix64 in counter mode: draw i of stream `key` is mix(key + (i + 1) * golden),
/// where mix is the SplitMix64 finaliser. Any language with 64-bit unsigned
/// arithmetic reproduces the same sequence.
///
///   uniform()  = (u64 >> 11) * 2^-53
///   normal()   = Box-Muller on two uniforms u1, u2: sqrt(-2 ln(1 - u1)) cos(2 pi u2)
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  /// Independent stream derived from this key and a label.
  CounterRng fork(std::uint64_t label) const;

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace d3seg
