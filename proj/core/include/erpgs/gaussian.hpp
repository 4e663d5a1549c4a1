#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "erpgs/erp_camera.hpp"
#include "erpgs/spherical_harmonics.hpp"

namespace erpgs {

using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Vec4 = Eigen::Vector4d;
/// One row per SH coefficient, columns are r, g, b.
using ShCoeffs = Eigen::Matrix<double, kMaxShCoeffs, 3, Eigen::RowMajor>;

/// Screen-space variance added to every projected covariance (pixel^2).
inline constexpr double kBlurFloor = 0.3;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One anisotropic Gaussian in raw (pre-activation) parameters. The same
/// layout stores gradients and Adam moments.
struct Gaussian3D {
  Vec3 mu = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rot = Vec4(1.0, 0.0, 0.0, 0.0);  // (w, x, y, z), normalized on use
  double logit_opacity = 0.0;
  ShCoeffs sh = ShCoeffs::Zero();

  Vec3 scale() const { return log_scale.array().exp(); }
  double opacity() const { return sigmoid(logit_opacity); }
  Vec4 unit_rot() const { return rot / rot.norm(); }

  static Gaussian3D zeros() {
    Gaussian3D g;
    g.rot.setZero();
    return g;
  }
};

inline constexpr int kParamsPerGaussian = 3 + 3 + 4 + 1 + 3 * kMaxShCoeffs;

enum class ParamGroup { kPosition, kScale, kRotation, kOpacity, kColorDc, kColorRest };
inline constexpr ParamGroup kAllParamGroups[] = {ParamGroup::kPosition, ParamGroup::kScale,
                                                 ParamGroup::kRotation, ParamGroup::kOpacity,
                                                 ParamGroup::kColorDc,  ParamGroup::kColorRest};

std::span<double> param_span(Gaussian3D& g, ParamGroup group);
std::span<const double> param_span(const Gaussian3D& g, ParamGroup group);

/// Flat view over every parameter, index in [0, kParamsPerGaussian).
double& param_at(Gaussian3D& g, int index);

/// Rotation matrix of a unit quaternion (w, x, y, z).
Mat3 quat_to_rotation(const Vec4& q);
/// d R / d q_k for k = w, x, y, z (q need not be unit; derivative of the
/// polynomial map).
std::array<Mat3, 4> quat_to_rotation_derivatives(const Vec4& q);
Vec4 rotation_to_quat(const Mat3& R);

/// R(q) diag(s)^2 R(q)^T.
Mat3 covariance3d(const Vec3& s, const Vec4& unit_q);

/// Index of the smallest scale axis, lowest index on ties.
int smallest_axis(const Vec3& log_scale);

/// World-frame unit normal: the shortest axis, flipped to face `cam_center`.
Vec3 gaussian_normal(const Gaussian3D& g, const Vec3& cam_center);

/// World-to-camera rigid transform plus the image it renders into.
struct CameraPose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  ErpImageGeom geom;

  Vec3 to_camera(const Vec3& world) const { return R * world + t; }
  Vec3 center() const { return -R.transpose() * t; }

  /// True when R is orthonormal with det +1 within `tol`.
  bool is_valid_rotation(double tol = 1e-6) const;

  static CameraPose look_from(const Vec3& center, const Mat3& R_world_to_cam, ErpImageGeom geom) {
    return {R_world_to_cam, -R_world_to_cam * center, geom};
  }
};

/// Screen-space covariance J R Sigma R^T J^T + kBlurFloor * I, pixel^2.
Mat2 project_covariance(const Mat3& sigma3, const CameraPose& pose, const Vec3& mu_world);

/// The optimizable scene plus everything that must stay row-aligned with it:
/// Adam moments and densification statistics.
class GaussianCloud {
 public:
  explicit GaussianCloud(int max_sh_degree = 0) : max_sh_degree_(max_sh_degree) {}

  std::size_t size() const { return gaussians_.size(); }
  bool empty() const { return gaussians_.empty(); }

  const std::vector<Gaussian3D>& gaussians() const { return gaussians_; }
  std::vector<Gaussian3D>& gaussians() { return gaussians_; }
  const Gaussian3D& operator[](std::size_t i) const { return gaussians_[i]; }
  Gaussian3D& operator[](std::size_t i) { return gaussians_[i]; }

  /// Appends with zeroed optimizer state and statistics.
  void push_back(const Gaussian3D& g);
  /// Keeps rows where keep[i] is true, in lockstep across all state.
  void filter(const std::vector<bool>& keep);

  std::vector<Gaussian3D>& exp_avg() { return exp_avg_; }
  std::vector<Gaussian3D>& exp_avg_sq() { return exp_avg_sq_; }
  const std::vector<Gaussian3D>& exp_avg() const { return exp_avg_; }
  const std::vector<Gaussian3D>& exp_avg_sq() const { return exp_avg_sq_; }

  std::vector<double>& grad_accum() { return grad_accum_; }
  std::vector<int>& grad_count() { return grad_count_; }
  const std::vector<double>& grad_accum() const { return grad_accum_; }
  const std::vector<int>& grad_count() const { return grad_count_; }
  void reset_densify_stats();
  void reset_optimizer_state();

  int max_sh_degree() const { return max_sh_degree_; }
  int active_sh_degree() const { return active_sh_degree_; }
  void set_active_sh_degree(int d) { active_sh_degree_ = std::min(d, max_sh_degree_); }

  /// Every per-row array has the same length as the collection.
  bool is_aligned() const;

 private:
  std::vector<Gaussian3D> gaussians_;
  std::vector<Gaussian3D> exp_avg_;
  std::vector<Gaussian3D> exp_avg_sq_;
  std::vector<double> grad_accum_;
  std::vector<int> grad_count_;
  int max_sh_degree_ = 0;
  int active_sh_degree_ = 0;
};

}  // namespace erpgs
