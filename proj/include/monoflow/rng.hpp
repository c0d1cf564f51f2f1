#pragma once

#include <cstdint>
#include <string_view>

namespace monoflow {

/// Counter-based generator: draw i of a stream is splitmix64 finalization of
/// (key + i * golden-gamma). Standard normals use Box-Muller with both outputs
/// consumed, so the stream is identical on every platform with IEEE doubles
/// and a conforming libm.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-counter+box-muller";

  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t next_u64() { return mix(key_ + (counter_++) * kGamma); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1].
  double uniform_open_low() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  double normal();

  /// Independent child stream; the parent's state is unchanged.
  Rng split(std::uint64_t stream_id) const {
    return Rng(key_ ^ mix(stream_id + 0x9e3779b97f4a7c15ULL), 0);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, int) : key_(mix(key)) {}

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace monoflow
