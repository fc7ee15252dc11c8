#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>

#include "alignlab/common.hpp"

namespace alignlab::binary {

void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
/// Row-major.
void write_matrix_f64(std::ostream& out, const MatrixXd& m);

// Readers return false on a short read.
bool read_u8(std::istream& in, std::uint8_t& v);
bool read_u32(std::istream& in, std::uint32_t& v);
bool read_f32(std::istream& in, float& v);
bool read_f64(std::istream& in, double& v);
bool read_matrix_f64(std::istream& in, MatrixXd& m);

}  // namespace alignlab::binary
