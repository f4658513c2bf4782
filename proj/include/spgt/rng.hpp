#pragma once

#include <cstdint>
#include <vector>

namespace spgt {

/// Counter-based generator. Draw i (0-based) of a stream with seed s is
///
///   mix64(s + (i + 1) * 0x9E3779B97F4A7C15)
///
/// where mix64 is the SplitMix64 finalizer. The stream is fully described by
/// (seed, counter), so it can be checkpointed and replayed on any platform.
/// Derived streams hash extra keys into the seed, which lets training code
/// address randomness by position (stage, step, slot) instead of by history.
class Rng {
 public:
  struct State {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  Rng() = default;
  explicit Rng(std::uint64_t seed) : state_{seed, 0} {}
  explicit Rng(State state) : state_(state) {}

  static std::uint64_t mix64(std::uint64_t z);

  /// Independent stream keyed by (seed, keys...).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound), unbiased (rejection on the top range).
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via Box-Muller (one value per two uniforms).
  double normal();
  /// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
  double truncated_normal(double std);

  /// Uniformly random permutation of [0, n) (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n);

  const State& state() const { return state_; }

 private:
  State state_;
};

}  // namespace spgt
