#include "alignlab/binary_io.hpp"

#include <array>
#include <bit>

namespace alignlab::binary {

namespace {

template <typename U>
void write_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFU);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
bool read_le(std::istream& in, U& v) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return true;
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }

void write_matrix_f64(std::ostream& out, const MatrixXd& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) write_f64(out, m(i, j));
}

bool read_u8(std::istream& in, std::uint8_t& v) {
  const int c = in.get();
  if (c == std::char_traits<char>::eof()) return false;
  v = static_cast<std::uint8_t>(c);
  return true;
}

bool read_u32(std::istream& in, std::uint32_t& v) { return read_le(in, v); }

bool read_f32(std::istream& in, float& v) {
  std::uint32_t bits = 0;
  if (!read_le(in, bits)) return false;
  v = std::bit_cast<float>(bits);
  return true;
}

bool read_f64(std::istream& in, double& v) {
  std::uint64_t bits = 0;
  if (!read_le(in, bits)) return false;
  v = std::bit_cast<double>(bits);
  return true;
}

bool read_matrix_f64(std::istream& in, MatrixXd& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      if (!read_f64(in, m(i, j))) return false;
  return true;
}

}  // namespace alignlab::binary
