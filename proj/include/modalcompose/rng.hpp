#pragma once

#include <cstdint>
#include <span>

namespace modalcompose {

// SplitMix64 finalizer. Bijective on 64-bit words.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Key of the independent stream `index` derived from `seed`.
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t index) noexcept;

/// Counter-based generator: the n-th 64-bit draw of a stream with key K is
/// splitmix64(K + n * 0x9E3779B97F4A7C15). Uniform doubles take the top 53
/// bits; normals use the Box-Muller transform and consume two words per pair.
/// The sequence is fully specified here so results do not depend on the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0) noexcept : key_(key) {}

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;

  // Uniform in [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi] (inclusive).
  int uniform_int(int lo, int hi) noexcept;
  double normal() noexcept;
  void fill_normal(std::span<double> out) noexcept;

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t index) const noexcept { return Rng(stream_key(key_, index)); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace modalcompose
