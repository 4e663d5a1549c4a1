#pragma once

#include <array>

#include <Eigen/Core>

namespace erpgs {

inline constexpr int kMaxShDegree = 3;
inline constexpr int kMaxShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);
inline constexpr double kShC0 = 0.28209479177387814;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Real SH basis values for a unit direction, using the sign and ordering
/// conventions of the reference splatting implementation. Entries beyond
/// `degree` are zero.
std::array<double, kMaxShCoeffs> sh_basis(const Eigen::Vector3d& dir, int degree);

/// d basis_k / d dir, one row per coefficient.
Eigen::Matrix<double, kMaxShCoeffs, 3> sh_basis_jacobian(const Eigen::Vector3d& dir, int degree);

inline double rgb_to_sh_dc(double c) { return (c - 0.5) / kShC0; }
inline double sh_dc_to_rgb(double dc) { return dc * kShC0 + 0.5; }

}  // namespace erpgs
