#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace wr {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

/// Mixes a root seed with a stage name so every stage draws from an
/// independent, reproducible stream.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view stage);

/// Deterministic random source. Distributions are implemented here instead of
/// via <random> distribution classes, whose output is implementation defined;
/// artifacts must be byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Box-Muller, one value per call).
  double normal();

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace wr
