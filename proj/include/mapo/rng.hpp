#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace mapo {

/// Deterministic, serializable random generator (xoshiro256++ core).
///
/// std::mt19937 + std::normal_distribution are implementation-defined, so
/// checkpoints could not round-trip across standard libraries. This engine
/// has an explicit 4x64-bit state plus the Box-Muller spare, all of which
/// serialize into checkpoints bit-exactly.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Inclusive integer range [lo, hi].
  int uniform_int(int lo, int hi);

  /// Standard normal via Box-Muller; the paired draw is cached.
  double gauss();

  std::vector<double> gauss_vector(int n);

  /// Independent stream derived from this generator's seed material.
  /// Does not advance this generator.
  Rng split(uint64_t stream) const;

  // State save/restore for checkpointing. Layout:
  // s[0..3], has_spare (0/1), spare double as bits.
  std::array<uint64_t, 6> state() const;
  static Rng from_state(const std::array<uint64_t, 6>& st);

  bool operator==(const Rng&) const = default;

 private:
  Rng() = default;

  std::array<uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mapo
