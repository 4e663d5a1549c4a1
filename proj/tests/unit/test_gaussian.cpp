#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "erpgs/gaussian.hpp"
#include "oracles.hpp"

namespace erpgs {
namespace {

Mat3 random_rotation(std::mt19937_64& rng) { return quat_to_rotation(testing::random_unit_quat(rng)); }

TEST(Covariance3d, Isotropic) {
  std::mt19937_64 rng(1);
  const Mat3 S = covariance3d(Vec3::Constant(0.7), testing::random_unit_quat(rng));
  EXPECT_LT((S - 0.49 * Mat3::Identity()).norm(), 1e-14);
}

TEST(Covariance3d, IdentityRotation) {
  const Mat3 S = covariance3d({1, 2, 3}, Vec4(1, 0, 0, 0));
  EXPECT_LT((S - Vec3(1, 4, 9).asDiagonal().toDenseMatrix()).norm(), 1e-14);
}

TEST(Covariance3d, EigenvaluesAreSquaredScales) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0.01, 3);
  for (int i = 0; i < 100; ++i) {
    const Vec3 s(U(rng), U(rng), U(rng));
    const Mat3 S = covariance3d(s, testing::random_unit_quat(rng));
    EXPECT_LT((S - S.transpose()).norm(), 1e-14);
    Eigen::SelfAdjointEigenSolver<Mat3> es(S);
    Vec3 expect = s.array().square();
    std::sort(expect.data(), expect.data() + 3);
    EXPECT_LT((es.eigenvalues() - expect).norm(), 1e-10);
    Eigen::LLT<Mat3> llt(S + 1e-12 * Mat3::Identity());
    EXPECT_EQ(llt.info(), Eigen::Success);
  }
}

TEST(Quaternion, RotationRoundTrip) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    const Vec4 q = testing::random_unit_quat(rng);
    const Mat3 R = quat_to_rotation(q);
    EXPECT_LT((R * R.transpose() - Mat3::Identity()).norm(), 1e-13);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-13);
    EXPECT_LT((quat_to_rotation(rotation_to_quat(R)) - R).norm(), 1e-12);
  }
}

TEST(Quaternion, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20; ++i) {
    const Vec4 q = testing::random_unit_quat(rng) * 1.3;
    const auto d = quat_to_rotation_derivatives(q);
    for (int k = 0; k < 4; ++k) {
      Vec4 a = q, b = q;
      a[k] += 1e-6;
      b[k] -= 1e-6;
      const Mat3 fd = (quat_to_rotation(a) - quat_to_rotation(b)) / 2e-6;
      EXPECT_LT((fd - d[k]).norm(), 1e-8);
    }
  }
}

Mat2 expected_forward_axis(double sigma, double d, const ErpImageGeom& g) {
  const double a = g.width / (2 * kPi);
  const double b = g.height / kPi;
  Mat2 m;
  m << std::pow(sigma / d * a, 2) + kBlurFloor, 0, 0, std::pow(sigma / d * b, 2) + kBlurFloor;
  return m;
}

TEST(ProjectCovariance, IsotropicForwardAxis) {
  const ErpImageGeom g{1024, 512};
  CameraPose pose;
  pose.geom = g;
  const double sigma = 0.05, d = 4.0;
  const Mat2 P = project_covariance(sigma * sigma * Mat3::Identity(), pose, {0, 0, d});
  EXPECT_LT((P - expected_forward_axis(sigma, d, g)).norm(), 1e-10);
  const Mat2 P2 = project_covariance(sigma * sigma * Mat3::Identity(), pose, {0, 0, 2 * d});
  const Mat2 floor = kBlurFloor * Mat2::Identity();
  EXPECT_LT(((P2 - floor) - 0.25 * (P - floor)).norm(), 1e-10);
}

TEST(ProjectCovariance, TranslationOnlyAffectsJacobian) {
  const ErpImageGeom g{64, 32};
  std::mt19937_64 rng(8);
  const Mat3 S = covariance3d({0.2, 0.5, 0.1}, testing::random_unit_quat(rng));
  const Mat3 R = random_rotation(rng);
  CameraPose pose{R, Vec3(0.3, -0.2, 0.5), g};
  const Vec3 mu(1.0, 0.5, 2.0);
  const Vec3 mc = pose.to_camera(mu);
  const Mat23 J = erp_jacobian(mc, g);
  const Mat2 expect = J * R * S * R.transpose() * J.transpose() + kBlurFloor * Mat2::Identity();
  EXPECT_LT((project_covariance(S, pose, mu) - expect).norm(), 1e-10);
}

TEST(ProjectCovariance, EquivariantUnderWorldRotation) {
  const ErpImageGeom g{128, 64};
  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) {
    const Mat3 S = covariance3d({0.2, 0.5, 0.1}, testing::random_unit_quat(rng));
    const Mat3 Rc = random_rotation(rng);
    const Vec3 center(0.3, -0.2, 0.5);
    const Vec3 mu(1.0, 0.4, 2.0);
    const CameraPose pose = CameraPose::look_from(center, Rc, g);
    const Mat3 W = random_rotation(rng);
    // Rotate the whole world by W: points map to W p, camera rotation becomes Rc W^T.
    const CameraPose rotated = CameraPose::look_from(W * center, Rc * W.transpose(), g);
    const Mat2 a = project_covariance(S, pose, mu);
    const Mat2 b = project_covariance(W * S * W.transpose(), rotated, W * mu);
    EXPECT_LT((a - b).norm(), 1e-9 * a.norm());
  }
}

TEST(ProjectCovariance, RollAboutOpticalAxis) {
  const ErpImageGeom g{1024, 512};
  const Mat3 Rz = Eigen::AngleAxisd(kPi / 2, Vec3::UnitZ()).toRotationMatrix();
  const Mat3 S = covariance3d({0.1, 0.1, 0.3}, Vec4(1, 0, 0, 0));
  CameraPose id;
  id.geom = g;
  const Vec3 mu(0, 0, 3);
  CameraPose rolled{Rz, Vec3::Zero(), g};
  const Mat2 a = project_covariance(S, id, mu);
  const Mat2 b = project_covariance(Rz.transpose() * S * Rz, rolled, Rz.transpose() * mu);
  EXPECT_LT((a - b).norm(), 1e-10);
}

TEST(GaussianNormal, Examples) {
  Gaussian3D g;
  g.log_scale = Vec3(1, 1, 0.01).array().log();
  EXPECT_LT((gaussian_normal(g, {0, 0, -5}) - Vec3(0, 0, -1)).norm(), 1e-15);
  g.log_scale = Vec3(0.01, 1, 1).array().log();
  EXPECT_LT((gaussian_normal(g, {10, 0, 0}) - Vec3(1, 0, 0)).norm(), 1e-15);
}

TEST(GaussianNormal, TieBreaksOnLowestIndex) {
  EXPECT_EQ(smallest_axis({0.5, 0.1, 0.1}), 1);
  EXPECT_EQ(smallest_axis({0.1, 0.1, 0.1}), 0);
}

TEST(GaussianNormal, UnitTowardCameraAndEquivariant) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    Gaussian3D g;
    g.mu = Vec3(n(rng), n(rng), n(rng));
    g.log_scale = Vec3(n(rng), n(rng), n(rng));
    g.rot = testing::random_unit_quat(rng) * 2.0;
    const Vec3 cam(n(rng), n(rng), n(rng));
    const Vec3 nrm = gaussian_normal(g, cam);
    EXPECT_NEAR(nrm.norm(), 1.0, 1e-12);
    EXPECT_GE(nrm.dot(cam - g.mu), 0.0);

    const Mat3 W = random_rotation(rng);
    Gaussian3D h = g;
    h.mu = W * g.mu;
    h.rot = rotation_to_quat(W * quat_to_rotation(g.unit_rot()));
    EXPECT_LT((gaussian_normal(h, W * cam) - W * nrm).norm(), 1e-10);
  }
}

TEST(GaussianCloud, StateStaysAligned) {
  GaussianCloud cloud(3);
  for (int i = 0; i < 5; ++i) cloud.push_back(Gaussian3D{});
  EXPECT_TRUE(cloud.is_aligned());
  cloud.exp_avg()[2].mu.x() = 7;
  cloud.grad_accum()[2] = 1.5;
  cloud.filter({true, false, true, false, true});
  EXPECT_EQ(cloud.size(), 3u);
  EXPECT_TRUE(cloud.is_aligned());
  EXPECT_EQ(cloud.exp_avg()[1].mu.x(), 7);
  EXPECT_EQ(cloud.grad_accum()[1], 1.5);
  cloud.reset_optimizer_state();
  EXPECT_EQ(cloud.exp_avg()[1].mu.x(), 0);
}

TEST(GaussianCloud, ActiveShDegreeCapped) {
  GaussianCloud cloud(2);
  cloud.set_active_sh_degree(3);
  EXPECT_EQ(cloud.active_sh_degree(), 2);
}

TEST(Gaussian3D, Activations) {
  Gaussian3D g;
  g.log_scale = Vec3(-1, 0, 2);
  g.logit_opacity = logit(0.25);
  g.rot = Vec4(2, 0, 0, 0);
  EXPECT_TRUE((g.scale().array() > 0).all());
  EXPECT_NEAR(g.opacity(), 0.25, 1e-15);
  EXPECT_LT((g.unit_rot() - Vec4(1, 0, 0, 0)).norm(), 1e-15);
}

TEST(ParamAt, CoversEveryGroup) {
  Gaussian3D g;
  int count = 0;
  for (auto grp : kAllParamGroups) count += static_cast<int>(param_span(g, grp).size());
  EXPECT_EQ(count, kParamsPerGaussian);
  param_at(g, 0) = 1.5;
  EXPECT_EQ(g.mu.x(), 1.5);
  param_at(g, 10) = -2;
  EXPECT_EQ(g.logit_opacity, -2);
  param_at(g, kParamsPerGaussian - 1) = 3;
  EXPECT_EQ(g.sh(15, 2), 3);
}

}  // namespace
}  // namespace erpgs
