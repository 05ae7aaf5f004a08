#pragma once

#include <Eigen/Dense>

#include <complex>

namespace spmor {

using Real = double;
using Complex = std::complex<double>;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;
using Index = Eigen::Index;

}  // namespace spmor
