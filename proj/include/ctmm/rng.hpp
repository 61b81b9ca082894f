#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace ctmm {

/// Counter-based 64-bit generator. Output i of a stream is a pure function of
/// (key, i), so any substream can be re-created from its key and position
/// without replaying earlier draws. Mixing uses the SplitMix64 finalizer.
class CounterRng {
 public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  CounterRng() = default;
  explicit CounterRng(std::uint64_t key) : state_{key, 0} {}
  explicit CounterRng(State s) : state_(s) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Key for a named substream: folds each path component into the seed.
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t k = mix(seed ^ 0x6A09E667F3BCC909ULL);
    for (std::uint64_t p : path) k = mix(k ^ mix(p + 0x3C6EF372FE94F82BULL));
    return k;
  }

  std::uint64_t next_u64() {
    const std::uint64_t c = state_.counter++;
    return mix(mix(state_.key) ^ (c * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  bool bernoulli(double p) { return uniform() < p; }

  /// Number of failures before the first success, success probability p in (0, 1].
  std::uint64_t geometric(double p) {
    if (p >= 1.0) return 0;
    return static_cast<std::uint64_t>(std::floor(std::log(uniform()) / std::log1p(-p)));
  }

  const State& state() const { return state_; }
  void set_state(State s) { state_ = s; }

 private:
  State state_{};
};

}  // namespace ctmm
