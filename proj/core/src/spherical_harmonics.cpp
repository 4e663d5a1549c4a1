#include "erpgs/spherical_harmonics.hpp"

namespace erpgs {
namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                          -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                          0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                          -0.5900435899266435};

}  // namespace

std::array<double, kMaxShCoeffs> sh_basis(const Eigen::Vector3d& dir, int degree) {
  std::array<double, kMaxShCoeffs> y{};
  y[0] = kShC0;
  if (degree < 1) return y;
  const double x = dir.x(), yy_ = dir.y(), z = dir.z();
  y[1] = -kC1 * yy_;
  y[2] = kC1 * z;
  y[3] = -kC1 * x;
  if (degree < 2) return y;
  const double xx = x * x, yy = yy_ * yy_, zz = z * z;
  const double xy = x * yy_, yz = yy_ * z, xz = x * z;
  y[4] = kC2[0] * xy;
  y[5] = kC2[1] * yz;
  y[6] = kC2[2] * (2.0 * zz - xx - yy);
  y[7] = kC2[3] * xz;
  y[8] = kC2[4] * (xx - yy);
  if (degree < 3) return y;
  y[9] = kC3[0] * yy_ * (3.0 * xx - yy);
  y[10] = kC3[1] * xy * z;
  y[11] = kC3[2] * yy_ * (4.0 * zz - xx - yy);
  y[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  y[13] = kC3[4] * x * (4.0 * zz - xx - yy);
  y[14] = kC3[5] * z * (xx - yy);
  y[15] = kC3[6] * x * (xx - 3.0 * yy);
  return y;
}

Eigen::Matrix<double, kMaxShCoeffs, 3> sh_basis_jacobian(const Eigen::Vector3d& dir, int degree) {
  Eigen::Matrix<double, kMaxShCoeffs, 3> d = Eigen::Matrix<double, kMaxShCoeffs, 3>::Zero();
  if (degree < 1) return d;
  const double x = dir.x(), y = dir.y(), z = dir.z();
  d.row(1) << 0.0, -kC1, 0.0;
  d.row(2) << 0.0, 0.0, kC1;
  d.row(3) << -kC1, 0.0, 0.0;
  if (degree < 2) return d;
  d.row(4) << kC2[0] * y, kC2[0] * x, 0.0;
  d.row(5) << 0.0, kC2[1] * z, kC2[1] * y;
  d.row(6) << -2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z;
  d.row(7) << kC2[3] * z, 0.0, kC2[3] * x;
  d.row(8) << 2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0.0;
  if (degree < 3) return d;
  const double xx = x * x, yy = y * y, zz = z * z;
  d.row(9) << 6.0 * kC3[0] * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0.0;
  d.row(10) << kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y;
  d.row(11) << -2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kC3[2] * y * z;
  d.row(12) << -6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z, kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
  d.row(13) << kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y, 8.0 * kC3[4] * x * z;
  d.row(14) << 2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z, kC3[5] * (xx - yy);
  d.row(15) << kC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kC3[6] * x * y, 0.0;
  return d;
}

}  // namespace erpgs
