#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace jhgrf {

// Mixes a tag into a seed (splitmix64 over an FNV-1a digest of the tag).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// Seeded source for every stochastic operation. Distributions are computed
// from raw 64-bit draws so a given seed yields the same stream everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1)
  double uniform();
  // (0, 1): never returns 0 or 1, safe under log.
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  // Gumbel(0, 1) via -log(-log U).
  double gumbel();
  // Support {1, 2, ...} with success probability p, mean 1/p.
  std::size_t geometric(double p);
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  // Independent child stream; does not advance this generator.
  Rng derive(std::string_view tag) const { return Rng(derive_seed(seed_, tag)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace jhgrf
