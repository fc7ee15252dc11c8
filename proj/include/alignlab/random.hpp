#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "alignlab/common.hpp"

namespace alignlab {

/// Combines seed components with a splitmix64 chain. Order matters.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

/// Seeded generator with portable derived distributions.
///
/// std::mt19937_64 output is fixed by the standard, but the standard
/// distributions are not, so uniform/normal/shuffle are implemented here to
/// keep datasets identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal();

  /// Fair coin.
  std::uint8_t bit();

  /// Uniform integer in [0, bound). bound > 0.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  std::vector<Index> permutation(Index n);

  MatrixXd gaussian(Index rows, Index cols);

 private:
  std::mt19937_64 engine_;
  std::uint64_t bit_buffer_ = 0;
  int bits_left_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace alignlab
