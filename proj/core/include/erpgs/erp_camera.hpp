#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace erpgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Pixel dimensions of an equirectangular image. Longitude spans the width,
/// latitude the height.
struct ErpImageGeom {
  int width = 0;
  int height = 0;

  /// Throws std::invalid_argument unless W >= 4, H >= 2, both even.
  void validate() const;
  bool contains(int u, int v) const { return u >= 0 && u < width && v >= 0 && v < height; }
  friend bool operator==(const ErpImageGeom&, const ErpImageGeom&) = default;
};

struct LatLon {
  double lon = 0.0;  // [-pi, pi)
  double lat = 0.0;  // [-pi/2, pi/2], positive is down (+y)
};

/// Continuous pixel coordinate; integer pixel (u, v) has its center at
/// (u + 0.5, v + 0.5).
struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

inline constexpr double kPi = std::numbers::pi;
/// Distance from the vertical axis below which a direction counts as a pole.
inline constexpr double kPoleEpsilon = 1e-8;

/// Camera-frame direction (x right, y down, z forward) to longitude/latitude.
/// Scale invariant. Throws DegenerateDirection on a zero vector.
LatLon project_dir(const Vec3& mu_cam);

PixelCoord latlon_to_pixel(const LatLon& a, const ErpImageGeom& g);
LatLon pixel_to_latlon(const PixelCoord& p, const ErpImageGeom& g);

/// Unit camera-frame ray through a continuous pixel coordinate.
Vec3 pixel_to_ray(double u, double v, const ErpImageGeom& g);

/// Ray through the center of integer pixel (u, v).
inline Vec3 pixel_center_ray(int u, int v, const ErpImageGeom& g) {
  return pixel_to_ray(u + 0.5, v + 0.5, g);
}

/// Full projection camera frame -> continuous pixel.
PixelCoord project_to_pixel(const Vec3& mu_cam, const ErpImageGeom& g);

/// d(u, v) / d(x, y, z) of project_to_pixel. Throws DegenerateDirection when
/// x^2 + z^2 <= kPoleEpsilon^2.
Mat23 erp_jacobian(const Vec3& mu_cam, const ErpImageGeom& g);

/// Partial derivatives of erp_jacobian with respect to x, y and z
/// (element k is dJ/d mu_cam[k]). Needed to push covariance gradients back
/// onto the Gaussian position.
std::array<Mat23, 3> erp_jacobian_derivatives(const Vec3& mu_cam, const ErpImageGeom& g);

/// Solid angle (steradians) covered by integer pixel (u, v).
double pixel_solid_angle_weight(int u, int v, const ErpImageGeom& g);

/// Vertical step used for tangent-plane neighbors: `kDoublePitch` uses
/// tan(2*pi/H), `kPitch` uses tan(pi/H) (one pixel of latitude).
enum class NeighborVStep { kDoublePitch, kPitch };

/// Continuous pixel coordinates of the four tangent-plane neighbors of
/// integer pixel (u, v), ordered right, left, down, up. Longitudes wrap into
/// [0, W). Throws std::domain_error for pixels in the pole rows.
std::array<PixelCoord, 4> tangent_neighbors(int u, int v, const ErpImageGeom& g,
                                            NeighborVStep vstep = NeighborVStep::kDoublePitch);

/// Wraps a longitude into [-pi, pi).
double wrap_longitude(double lon);

/// Wraps a horizontal pixel offset into [-W/2, W/2).
inline double wrap_offset(double du, double width) {
  return du - width * std::floor((du + 0.5 * width) / width);
}

}  // namespace erpgs
