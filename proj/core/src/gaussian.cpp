#include "erpgs/gaussian.hpp"

#include <cassert>

#include <Eigen/Geometry>

namespace erpgs {

std::span<double> param_span(Gaussian3D& g, ParamGroup group) {
  switch (group) {
    case ParamGroup::kPosition: return {g.mu.data(), 3};
    case ParamGroup::kScale: return {g.log_scale.data(), 3};
    case ParamGroup::kRotation: return {g.rot.data(), 4};
    case ParamGroup::kOpacity: return {&g.logit_opacity, 1};
    case ParamGroup::kColorDc: return {g.sh.data(), 3};
    case ParamGroup::kColorRest: return {g.sh.data() + 3, 3 * (kMaxShCoeffs - 1)};
  }
  return {};
}

std::span<const double> param_span(const Gaussian3D& g, ParamGroup group) {
  return param_span(const_cast<Gaussian3D&>(g), group);
}

double& param_at(Gaussian3D& g, int index) {
  assert(index >= 0 && index < kParamsPerGaussian);
  for (ParamGroup group : kAllParamGroups) {
    auto s = param_span(g, group);
    if (index < static_cast<int>(s.size())) return s[index];
    index -= static_cast<int>(s.size());
  }
  return g.logit_opacity;  // unreachable
}

Mat3 quat_to_rotation(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 R;
  R << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return R;
}

std::array<Mat3, 4> quat_to_rotation_derivatives(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << 0.0, -2.0 * z, 2.0 * y,
      2.0 * z, 0.0, -2.0 * x,
      -2.0 * y, 2.0 * x, 0.0;
  d[1] << 0.0, 2.0 * y, 2.0 * z,
      2.0 * y, -4.0 * x, -2.0 * w,
      2.0 * z, 2.0 * w, -4.0 * x;
  d[2] << -4.0 * y, 2.0 * x, 2.0 * w,
      2.0 * x, 0.0, 2.0 * z,
      -2.0 * w, 2.0 * z, -4.0 * y;
  d[3] << -4.0 * z, -2.0 * w, 2.0 * x,
      2.0 * w, -4.0 * z, 2.0 * y,
      2.0 * x, 2.0 * y, 0.0;
  return d;
}

Vec4 rotation_to_quat(const Mat3& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  Vec4 out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0.0) out = -out;
  return out;
}

Mat3 covariance3d(const Vec3& s, const Vec4& unit_q) {
  const Mat3 M = quat_to_rotation(unit_q) * s.asDiagonal();
  return M * M.transpose();
}

int smallest_axis(const Vec3& log_scale) {
  int k = 0;
  for (int i = 1; i < 3; ++i) {
    if (log_scale[i] < log_scale[k]) k = i;
  }
  return k;
}

Vec3 gaussian_normal(const Gaussian3D& g, const Vec3& cam_center) {
  Vec3 n = quat_to_rotation(g.unit_rot()).col(smallest_axis(g.log_scale));
  if (n.dot(cam_center - g.mu) < 0.0) n = -n;
  return n;
}

bool CameraPose::is_valid_rotation(double tol) const {
  const double ortho = (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::isfinite(ortho) && ortho <= tol && std::abs(R.determinant() - 1.0) <= tol &&
         t.allFinite();
}

Mat2 project_covariance(const Mat3& sigma3, const CameraPose& pose, const Vec3& mu_world) {
  const Mat23 M = erp_jacobian(pose.to_camera(mu_world), pose.geom) * pose.R;
  Mat2 cov = M * sigma3 * M.transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += kBlurFloor;
  cov(1, 1) += kBlurFloor;
  return cov;
}

void GaussianCloud::push_back(const Gaussian3D& g) {
  gaussians_.push_back(g);
  exp_avg_.push_back(Gaussian3D::zeros());
  exp_avg_sq_.push_back(Gaussian3D::zeros());
  grad_accum_.push_back(0.0);
  grad_count_.push_back(0);
}

namespace {
template <typename T>
void filter_rows(std::vector<T>& v, const std::vector<bool>& keep) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (keep[i]) {
      if (out != i) v[out] = std::move(v[i]);
      ++out;
    }
  }
  v.resize(out);
}
}  // namespace

void GaussianCloud::filter(const std::vector<bool>& keep) {
  assert(keep.size() == gaussians_.size());
  filter_rows(gaussians_, keep);
  filter_rows(exp_avg_, keep);
  filter_rows(exp_avg_sq_, keep);
  filter_rows(grad_accum_, keep);
  filter_rows(grad_count_, keep);
}

void GaussianCloud::reset_densify_stats() {
  std::fill(grad_accum_.begin(), grad_accum_.end(), 0.0);
  std::fill(grad_count_.begin(), grad_count_.end(), 0);
}

void GaussianCloud::reset_optimizer_state() {
  std::fill(exp_avg_.begin(), exp_avg_.end(), Gaussian3D::zeros());
  std::fill(exp_avg_sq_.begin(), exp_avg_sq_.end(), Gaussian3D::zeros());
}

bool GaussianCloud::is_aligned() const {
  const std::size_t n = gaussians_.size();
  return exp_avg_.size() == n && exp_avg_sq_.size() == n && grad_accum_.size() == n &&
         grad_count_.size() == n;
}

}  // namespace erpgs
