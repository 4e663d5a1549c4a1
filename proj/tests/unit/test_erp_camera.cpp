#include <cmath>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "erpgs/erp_camera.hpp"

namespace erpgs {
namespace {

const ErpImageGeom kGeom1k{1024, 512};

PixelCoord composite(const Vec3& mu, const ErpImageGeom& g) {
  return latlon_to_pixel(project_dir(mu), g);
}

TEST(ProjectDir, AxisDirections) {
  auto a = project_dir({0, 0, 1});
  EXPECT_DOUBLE_EQ(a.lon, 0.0);
  EXPECT_DOUBLE_EQ(a.lat, 0.0);
  a = project_dir({1, 0, 0});
  EXPECT_DOUBLE_EQ(a.lon, kPi / 2);
  EXPECT_DOUBLE_EQ(a.lat, 0.0);
  a = project_dir({0, -1, 0});
  EXPECT_DOUBLE_EQ(a.lon, 0.0);
  EXPECT_DOUBLE_EQ(a.lat, -kPi / 2);
}

TEST(ProjectDir, BackwardAxisWrapsToMinusPi) {
  const auto a = project_dir({0, 0, -1});
  EXPECT_DOUBLE_EQ(a.lon, -kPi);
}

TEST(ProjectDir, ZeroVectorThrows) { EXPECT_THROW(project_dir(Vec3::Zero()), std::domain_error); }

TEST(ProjectDir, ScaleInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int i = 0; i < 200; ++i) {
    const Vec3 mu(n(rng), n(rng), n(rng));
    const double k = std::exp(n(rng));
    const auto a = project_dir(mu), b = project_dir(k * mu);
    EXPECT_NEAR(a.lon, b.lon, 1e-12);
    EXPECT_NEAR(a.lat, b.lat, 1e-12);
  }
}

TEST(LatLonToPixel, Examples) {
  auto p = latlon_to_pixel({0, 0}, kGeom1k);
  EXPECT_DOUBLE_EQ(p.u, 512);
  EXPECT_DOUBLE_EQ(p.v, 256);
  p = latlon_to_pixel({-kPi, -kPi / 2}, kGeom1k);
  EXPECT_DOUBLE_EQ(p.u, 0);
  EXPECT_DOUBLE_EQ(p.v, 0);
  p = latlon_to_pixel({kPi / 2, kPi / 4}, kGeom1k);
  EXPECT_NEAR(p.u, 768, 1e-12);
  EXPECT_NEAR(p.v, 384, 1e-12);
}

TEST(PixelToRay, Examples) {
  EXPECT_LT((pixel_to_ray(512, 256, kGeom1k) - Vec3(0, 0, 1)).norm(), 1e-15);
  EXPECT_LT((pixel_to_ray(0, 256, kGeom1k) - Vec3(0, 0, -1)).norm(), 1e-15);
}

TEST(PixelToRay, RoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const double u = U(rng) * kGeom1k.width;
    const double v = 1 + U(rng) * (kGeom1k.height - 2);
    const Vec3 d = pixel_to_ray(u, v, kGeom1k);
    EXPECT_NEAR(d.norm(), 1.0, 1e-14);
    const auto p = composite(d, kGeom1k);
    EXPECT_NEAR(p.u, u, 1e-9);
    EXPECT_NEAR(p.v, v, 1e-9);
  }
}

Mat23 fd_jacobian(const Vec3& mu, const ErpImageGeom& g) {
  const double h = 1e-6 * mu.norm();
  Mat23 J;
  for (int k = 0; k < 3; ++k) {
    Vec3 a = mu, b = mu;
    a[k] += h;
    b[k] -= h;
    const auto pa = composite(a, g), pb = composite(b, g);
    J(0, k) = wrap_offset(pa.u - pb.u, g.width) / (2 * h);
    J(1, k) = (pa.v - pb.v) / (2 * h);
  }
  return J;
}

TEST(ErpJacobian, ForwardAxis) {
  const Mat23 J = erp_jacobian({0, 0, 1}, kGeom1k);
  EXPECT_NEAR(J(0, 0), 1024 / (2 * kPi), 1e-12);
  EXPECT_NEAR(J(1, 1), 512 / kPi, 1e-12);
  EXPECT_NEAR(J(0, 0), 162.97466172610083, 1e-9);
  EXPECT_EQ(J(0, 1), 0.0);
  EXPECT_EQ(J(1, 0), 0.0);
  EXPECT_EQ(J(0, 2), 0.0);
  EXPECT_EQ(J(1, 2), 0.0);
  const Mat23 fd = fd_jacobian({0, 0, 1}, kGeom1k);
  EXPECT_LT((J - fd).norm() / J.norm(), 1e-4);
}

TEST(ErpJacobian, HomogeneousDegreeMinusOne) {
  const Mat23 J1 = erp_jacobian({0.3, -0.2, 1}, kGeom1k);
  const Mat23 J2 = erp_jacobian({0.6, -0.4, 2}, kGeom1k);
  EXPECT_LT((J2 - 0.5 * J1).norm(), 1e-12);
}

TEST(ErpJacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0, 1);
  const double max_lat = 80.0 * kPi / 180.0;
  for (int i = 0; i < 1000; ++i) {
    const double lon = -kPi + 2 * kPi * U(rng);
    const double lat = (2 * U(rng) - 1) * max_lat;
    const double r = 0.1 + 10 * U(rng);
    const Vec3 mu = r * Vec3(std::cos(lat) * std::sin(lon), std::sin(lat), std::cos(lat) * std::cos(lon));
    const Mat23 J = erp_jacobian(mu, kGeom1k);
    const Mat23 fd = fd_jacobian(mu, kGeom1k);
    ASSERT_LT((J - fd).norm() / fd.norm(), 1e-4) << "lon=" << lon << " lat=" << lat;
  }
}

TEST(ErpJacobian, PoleThrows) {
  EXPECT_THROW(erp_jacobian({0, 1, 0}, kGeom1k), std::domain_error);
  EXPECT_THROW(erp_jacobian({1e-9, -1, 0}, kGeom1k), std::domain_error);
}

TEST(ErpJacobian, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int i = 0; i < 200; ++i) {
    Vec3 mu(n(rng), 0.5 * n(rng), n(rng));
    const auto dJ = erp_jacobian_derivatives(mu, kGeom1k);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Vec3 a = mu, b = mu;
      a[k] += h;
      b[k] -= h;
      const Mat23 fd = (erp_jacobian(a, kGeom1k) - erp_jacobian(b, kGeom1k)) / (2 * h);
      ASSERT_LT((dJ[k] - fd).norm(), 1e-5 * std::max(1.0, fd.norm())) << "axis " << k;
    }
  }
}

TEST(SolidAngle, SumsToFourPi) {
  for (auto g : {ErpImageGeom{4, 2}, ErpImageGeom{256, 128}, ErpImageGeom{1024, 512}, ErpImageGeom{6, 4}}) {
    double sum = 0;
    for (int v = 0; v < g.height; ++v)
      for (int u = 0; u < g.width; ++u) sum += pixel_solid_angle_weight(u, v, g);
    EXPECT_NEAR(sum, 4 * kPi, 1e-9) << g.width << "x" << g.height;
  }
}

TEST(SolidAngle, EquatorAdjacentPixel) {
  const double w = pixel_solid_angle_weight(10, 256, kGeom1k);
  EXPECT_NEAR(w, (2 * kPi / 1024) * std::sin(kPi / 512), 1e-18);
  EXPECT_NEAR(w, 3.7649e-5, 1e-9);
}

TEST(SolidAngle, RowInvariantAndPeakAtEquator) {
  const ErpImageGeom g{64, 32};
  for (int v = 0; v < g.height; ++v) {
    const double w0 = pixel_solid_angle_weight(0, v, g);
    EXPECT_GT(w0, 0);
    EXPECT_DOUBLE_EQ(w0, pixel_solid_angle_weight(37, v, g));
    if (v < g.height / 2 - 1) EXPECT_LT(w0, pixel_solid_angle_weight(0, v + 1, g));
  }
}

TEST(TangentNeighbors, EquatorExactOffsets) {
  // An odd row count puts a pixel center exactly on the equator.
  const ErpImageGeom g{64, 33};
  const int u = 40, v = 16;
  const auto c = pixel_to_latlon({u + 0.5, v + 0.5}, g);
  ASSERT_NEAR(c.lat, 0.0, 1e-15);
  const auto nb = tangent_neighbors(u, v, g);
  const auto r = pixel_to_latlon(nb[0], g), l = pixel_to_latlon(nb[1], g);
  EXPECT_NEAR(r.lon - c.lon, 2 * kPi / g.width, 1e-12);
  EXPECT_NEAR(l.lon - c.lon, -2 * kPi / g.width, 1e-12);
  EXPECT_NEAR(r.lat, 0, 1e-12);
  EXPECT_NEAR(l.lat, 0, 1e-12);
  const auto d = pixel_to_latlon(nb[2], g), up = pixel_to_latlon(nb[3], g);
  EXPECT_NEAR(d.lon, c.lon, 1e-12);
  EXPECT_NEAR(up.lon, c.lon, 1e-12);
  EXPECT_GT(d.lat, 0);
  EXPECT_LT(up.lat, 0);
  // Double-pitch vertical step: angular distance equals 2π/H.
  EXPECT_NEAR(d.lat, 2 * kPi / g.height, 1e-12);
  const auto pitch = tangent_neighbors(u, v, g, NeighborVStep::kPitch);
  EXPECT_NEAR(pixel_to_latlon(pitch[2], g).lat, kPi / g.height, 1e-12);
}

TEST(TangentNeighbors, SeamWraps) {
  const ErpImageGeom g{64, 33};
  const auto nb = tangent_neighbors(63, 16, g);
  EXPECT_GE(nb[0].u, 0.0);
  EXPECT_LT(nb[0].u, g.width);
  EXPECT_NEAR(nb[0].u, 0.5, 1e-9);
}

TEST(TangentNeighbors, WiderAtHighLatitude) {
  const ErpImageGeom g{256, 128};
  auto dist = [&](int v) {
    const int u = 100;
    const auto nb = tangent_neighbors(u, v, g);
    return std::abs(wrap_offset(nb[0].u - (u + 0.5), g.width));
  };
  const int v60 = static_cast<int>(std::floor(latlon_to_pixel({0, kPi / 3}, g).v));
  EXPECT_GT(dist(v60), dist(64));
}

TEST(TangentNeighbors, PoleRowThrows) {
  const ErpImageGeom g{64, 32};
  EXPECT_THROW(tangent_neighbors(3, 0, g), std::domain_error);
  EXPECT_THROW(tangent_neighbors(3, 31, g), std::domain_error);
  EXPECT_NO_THROW(tangent_neighbors(3, 1, g));
}

TEST(ErpImageGeom, Validate) {
  EXPECT_NO_THROW((ErpImageGeom{4, 2}.validate()));
  EXPECT_THROW((ErpImageGeom{2, 2}.validate()), std::invalid_argument);
  EXPECT_THROW((ErpImageGeom{5, 2}.validate()), std::invalid_argument);
  EXPECT_THROW((ErpImageGeom{4, 1}.validate()), std::invalid_argument);
}

}  // namespace
}  // namespace erpgs
