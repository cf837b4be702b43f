#pragma once

#include <complex>
#include <cstdint>

#include <Eigen/Dense>

namespace wbcran {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

// dBW -> W
inline double dbw_to_watts(double dbw) { return std::pow(10.0, dbw / 10.0); }

}  // namespace wbcran
