#include "erpgs/erp_camera.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "erpgs/error.hpp"

namespace erpgs {

void ErpImageGeom::validate() const {
  if (width < 4 || height < 2 || width % 2 != 0 || height % 2 != 0) {
    throw std::invalid_argument("invalid ERP geometry " + std::to_string(width) + "x" +
                                std::to_string(height) + " (need even W >= 4, even H >= 2)");
  }
}

double wrap_longitude(double lon) {
  double w = lon - 2.0 * kPi * std::floor((lon + kPi) / (2.0 * kPi));
  // floor() can round a value just below pi up to exactly pi.
  if (w >= kPi) w -= 2.0 * kPi;
  return w;
}

LatLon project_dir(const Vec3& mu_cam) {
  const double r = mu_cam.norm();
  if (!(r > 0.0)) throw DegenerateDirection("project_dir: zero-length direction");
  double lon = std::atan2(mu_cam.x(), mu_cam.z());
  if (lon >= kPi) lon = -kPi;
  const double lat = std::asin(std::clamp(mu_cam.y() / r, -1.0, 1.0));
  return {lon, lat};
}

PixelCoord latlon_to_pixel(const LatLon& a, const ErpImageGeom& g) {
  return {g.width / (2.0 * kPi) * (a.lon + kPi), g.height / (2.0 * kPi) * (2.0 * a.lat + kPi)};
}

LatLon pixel_to_latlon(const PixelCoord& p, const ErpImageGeom& g) {
  return {2.0 * kPi * p.u / g.width - kPi, kPi * p.v / g.height - 0.5 * kPi};
}

Vec3 pixel_to_ray(double u, double v, const ErpImageGeom& g) {
  const LatLon a = pixel_to_latlon({u, v}, g);
  const double cl = std::cos(a.lat);
  return {cl * std::sin(a.lon), std::sin(a.lat), cl * std::cos(a.lon)};
}

PixelCoord project_to_pixel(const Vec3& mu_cam, const ErpImageGeom& g) {
  return latlon_to_pixel(project_dir(mu_cam), g);
}

Mat23 erp_jacobian(const Vec3& mu_cam, const ErpImageGeom& g) {
  const double x = mu_cam.x(), y = mu_cam.y(), z = mu_cam.z();
  const double rho2 = x * x + z * z;
  if (rho2 <= kPoleEpsilon * kPoleEpsilon) {
    throw DegenerateDirection("erp_jacobian: direction at a pole");
  }
  const double rho = std::sqrt(rho2);
  const double r2 = rho2 + y * y;
  const double a = g.width / (2.0 * kPi);
  const double b = g.height / kPi;
  Mat23 J;
  J << a * z / rho2, 0.0, -a * x / rho2,
      -b * x * y / (r2 * rho), b * rho / r2, -b * z * y / (r2 * rho);
  return J;
}

std::array<Mat23, 3> erp_jacobian_derivatives(const Vec3& mu_cam, const ErpImageGeom& g) {
  const double x = mu_cam.x(), y = mu_cam.y(), z = mu_cam.z();
  const double rho2 = x * x + z * z;
  if (rho2 <= kPoleEpsilon * kPoleEpsilon) {
    throw DegenerateDirection("erp_jacobian_derivatives: direction at a pole");
  }
  const double rho = std::sqrt(rho2);
  const double rho4 = rho2 * rho2;
  const double r2 = rho2 + y * y;
  const double r4 = r2 * r2;
  const double a = g.width / (2.0 * kPi);
  const double b = g.height / kPi;

  // v-row entries share the denominator q = r^2 * rho.
  const double q = r2 * rho;
  const double q2 = q * q;
  const double qx = 2.0 * x * rho + r2 * x / rho;
  const double qy = 2.0 * y * rho;
  const double qz = 2.0 * z * rho + r2 * z / rho;

  std::array<Mat23, 3> d;
  // d/dx
  d[0] << -2.0 * a * x * z / rho4, 0.0, -a / rho2 + 2.0 * a * x * x / rho4,
      -b * (y / q - x * y * qx / q2), b * (x / (rho * r2) - 2.0 * x * rho / r4), b * z * y * qx / q2;
  // d/dy
  d[1] << 0.0, 0.0, 0.0,
      -b * (x / q - x * y * qy / q2), -2.0 * b * y * rho / r4, -b * (z / q - z * y * qy / q2);
  // d/dz
  d[2] << a / rho2 - 2.0 * a * z * z / rho4, 0.0, 2.0 * a * x * z / rho4,
      b * x * y * qz / q2, b * (z / (rho * r2) - 2.0 * z * rho / r4), -b * (y / q - z * y * qz / q2);
  return d;
}

double pixel_solid_angle_weight(int u, int v, const ErpImageGeom& g) {
  (void)u;  // longitude invariant
  const double dphi = 2.0 * kPi / g.width;
  const double theta0 = kPi * v / g.height - 0.5 * kPi;
  const double theta1 = kPi * (v + 1) / g.height - 0.5 * kPi;
  return dphi * (std::sin(theta1) - std::sin(theta0));
}

std::array<PixelCoord, 4> tangent_neighbors(int u, int v, const ErpImageGeom& g, NeighborVStep vstep) {
  const LatLon c = pixel_to_latlon({u + 0.5, v + 0.5}, g);
  if (!(std::abs(c.lat) < 0.5 * kPi - kPi / g.height)) {
    throw std::domain_error("tangent_neighbors: pixel row " + std::to_string(v) + " is a pole row");
  }
  const double tx = std::tan(2.0 * kPi / g.width);
  const double ty = vstep == NeighborVStep::kDoublePitch ? std::tan(2.0 * kPi / g.height)
                                                         : std::tan(kPi / g.height);
  const std::array<std::array<double, 2>, 4> offsets{{{tx, 0.0}, {-tx, 0.0}, {0.0, ty}, {0.0, -ty}}};

  // Inverse gnomonic projection around (lon, lat) = (c.lon, c.lat).
  const double sin_lat = std::sin(c.lat), cos_lat = std::cos(c.lat);
  std::array<PixelCoord, 4> out;
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    const auto [ox, oy] = offsets[k];
    const double rho = std::hypot(ox, oy);
    const double nu = std::atan(rho);
    const double sn = std::sin(nu), cn = std::cos(nu);
    const double lat = std::asin(std::clamp(cn * sin_lat + oy * sn * cos_lat / rho, -1.0, 1.0));
    const double lon =
        wrap_longitude(c.lon + std::atan2(ox * sn, rho * cos_lat * cn - oy * sin_lat * sn));
    out[k] = latlon_to_pixel({lon, lat}, g);
  }
  return out;
}

}  // namespace erpgs
