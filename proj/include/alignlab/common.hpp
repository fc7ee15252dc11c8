#pragma once

#include <cstddef>
#include <cstdint>

#include <Eigen/Dense>

namespace alignlab {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

// Rows are samples, columns are features throughout the library.
using Index = Eigen::Index;

}  // namespace alignlab
