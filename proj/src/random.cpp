#include "alignlab/random.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace alignlab {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint8_t Rng::bit() {
  if (bits_left_ == 0) {
    bit_buffer_ = next();
    bits_left_ = 64;
  }
  const auto b = static_cast<std::uint8_t>(bit_buffer_ & 1U);
  bit_buffer_ >>= 1;
  --bits_left_;
  return b;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = bound * (UINT64_MAX / bound);
  std::uint64_t x = 0;
  do {
    x = next();
  } while (x >= limit);
  return x % bound;
}

std::vector<Index> Rng::permutation(Index n) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  shuffle(std::span<Index>(perm));
  return perm;
}

MatrixXd Rng::gaussian(Index rows, Index cols) {
  MatrixXd m(rows, cols);
  // Row-major fill order so the draw sequence is layout independent.
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = normal();
  return m;
}

}  // namespace alignlab
