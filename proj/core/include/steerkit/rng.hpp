#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace steerkit {

// 64-bit FNV-1a; used for seed derivation and golden-file hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Deterministic generator owned by the caller. Conversions to floating point
// are done here rather than through <random> distributions, whose output is
// implementation-defined, so seeded runs agree across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n);

  // Standard normal (Box-Muller).
  double normal();

  std::uint64_t seed() const { return seed_; }

  // Independent stream keyed by name, e.g. Rng(seed).substream("data").
  Rng substream(std::string_view name) const { return Rng(derive_seed(seed_, name)); }
  Rng substream(std::string_view name, std::uint64_t index) const;

  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

}  // namespace steerkit
