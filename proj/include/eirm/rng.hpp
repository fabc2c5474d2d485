#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace eirm {

// Seeded generator with portable derived distributions. The std::*_distribution
// templates are implementation-defined, so every draw is computed here from the
// raw 64-bit engine output to keep streams identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Child generator keyed by (seed, label). Independent of how many draws the
  /// parent has made.
  Rng split(std::string_view label) const;
  Rng split(std::string_view label, std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::int64_t integer(std::int64_t lo, std::int64_t hi_inclusive);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eirm
