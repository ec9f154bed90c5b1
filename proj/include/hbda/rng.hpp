#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace hbda {

/// Random stream owned by exactly one chain or one data-generation task.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Variates are produced by the generators below rather than the
/// <random> distributions, whose algorithms differ between standard
/// libraries; this keeps chain files identical across toolchains. The whole
/// state, including the cached second normal from the polar method, can be
/// saved to text and restored for checkpoint/resume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Stream for a named purpose derived from a global seed:
  /// seed' = splitmix64(seed XOR fnv1a64(purpose)).
  static Rng stream(std::uint64_t seed, std::string_view purpose);
  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Marsaglia polar method).
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Gamma(shape, 1) by Marsaglia-Tsang squeeze/rejection; shape < 1 uses
  /// the boost G(a) = G(a + 1) * U^(1/a).
  double gamma(double shape);

  std::string save_state() const;
  void restore_state(const std::string& state);

  bool operator==(const Rng& other) const {
    return engine_ == other.engine_ && has_cached_ == other.has_cached_ &&
           (!has_cached_ || cached_ == other.cached_);
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace hbda
