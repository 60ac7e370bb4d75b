#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace compav {

// Deterministic RNG. Conversions to floating point are done here rather than
// through <random> distributions so streams are reproducible across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi);  // inclusive bounds
  double normal();

  // Independent child stream keyed by name.
  Rng fork(std::string_view name) const { return Rng(derive_seed(seed_, name)); }

  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace compav
