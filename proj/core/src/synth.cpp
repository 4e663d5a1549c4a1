#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Geometry>

#include "erpgs/image_io.hpp"
#include "erpgs/rasterizer.hpp"
#include "erpgs/scene_io.hpp"

namespace erpgs {
namespace fs = std::filesystem;

namespace {

// Camera stand: a disk below the horizon whose longitude changes per view.
constexpr double kStandLat = 50.0 * kPi / 180.0;
constexpr double kStandRadius = 14.0 * kPi / 180.0;
constexpr double kGoldenFraction = 0.6180339887498949;
const Vec3 kStandColor(0.55, 0.5, 0.45);

Mat3 yaw_world_to_camera(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitY()).toRotationMatrix().transpose();
}

std::string view_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03d", i);
  return buf;
}

Vec3 stand_direction(int view) {
  const double frac = std::fmod(0.5 + view * kGoldenFraction, 1.0);
  const double lon = -kPi + 2.0 * kPi * frac;
  return {std::cos(kStandLat) * std::sin(lon), std::sin(kStandLat), std::cos(kStandLat) * std::cos(lon)};
}

}  // namespace

void SynthSpec::validate() const {
  if (n_gaussians < 1) throw std::invalid_argument("synth: need at least 1 Gaussian");
  if (n_views < 2) throw std::invalid_argument("synth: need at least 2 views");
  ErpImageGeom{width, height}.validate();
  if (test_every < 0) throw std::invalid_argument("synth: test_every must be >= 0");
  if (!(camera_radius > 0 && shell_inner > camera_radius && shell_thickness > 0 && scale_min > 0 &&
        scale_max >= scale_min && patch_size >= 1 && patch_radius >= 0 && color_jitter >= 0)) {
    throw std::invalid_argument("synth: inconsistent scene layout");
  }
}

std::vector<CameraPose> synth_camera_path(const SynthSpec& spec) {
  const ErpImageGeom geom{spec.width, spec.height};
  std::vector<CameraPose> poses;
  const int n = spec.n_views;
  for (int i = 0; i < n; ++i) {
    double angle, radius, y = 0.0;
    if (spec.path == CameraPath::kRing) {
      angle = 2.0 * kPi * i / n;
      radius = spec.camera_radius;
    } else {
      const double t = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
      angle = 4.0 * kPi * t;
      radius = spec.camera_radius * (0.4 + 0.6 * t);
      y = 0.15 * spec.camera_radius * (2.0 * t - 1.0);
    }
    const Vec3 center(radius * std::sin(angle), y, radius * std::cos(angle));
    const Mat3 R = yaw_world_to_camera(angle);
    // Route through the quaternion the manifest stores so renders match reloaded poses exactly.
    poses.push_back(make_pose(rotation_to_quat(R), -R * center, geom, "synth"));
  }
  return poses;
}

double camera_extent(const std::vector<CameraPose>& poses) {
  if (poses.empty()) return 1.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : poses) mean += p.center();
  mean /= static_cast<double>(poses.size());
  double r = 0.0;
  for (const auto& p : poses) r = std::max(r, (p.center() - mean).norm());
  return 1.1 * r;
}

SynthResult synth_scene(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  const ErpImageGeom geom{spec.width, spec.height};
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);

  SynthResult result;
  result.poses = synth_camera_path(spec);
  const double extent = camera_extent(result.poses);

  GaussianCloud& cloud = result.hidden;
  std::vector<Vec3> colors;
  const double log_lo = std::log(spec.scale_min), log_hi = std::log(spec.scale_max);
  Vec3 patch_center = Vec3::Zero(), patch_color = Vec3::Zero();
  Mat3 patch_frame = Mat3::Identity();
  for (int i = 0; i < spec.n_gaussians; ++i) {
    if (i % spec.patch_size == 0) {
      const Vec3 dir = Vec3(N(rng), N(rng), N(rng)).normalized();
      patch_center = (spec.shell_inner + spec.shell_thickness * U(rng)) * dir;
      patch_frame = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), dir).toRotationMatrix();
      patch_color = Vec3(0.1 + 0.8 * U(rng), 0.1 + 0.8 * U(rng), 0.1 + 0.8 * U(rng));
    }
    Gaussian3D g;
    const double r = spec.patch_radius * std::sqrt(U(rng)), phi = 2.0 * kPi * U(rng);
    g.mu = patch_center + patch_frame * Vec3(r * std::cos(phi), r * std::sin(phi), 0.0);
    const double a = std::exp(log_lo + (log_hi - log_lo) * U(rng));
    const double b = std::exp(log_lo + (log_hi - log_lo) * U(rng));
    const double c = (0.05 + 0.1 * U(rng)) * std::min(a, b);
    g.log_scale = Vec3(std::log(a), std::log(b), std::log(c));
    const double spin = 2.0 * kPi * U(rng);
    if (spec.surface_aligned) {
      g.rot = rotation_to_quat(patch_frame * Eigen::AngleAxisd(spin, Vec3::UnitZ()).toRotationMatrix());
    } else {
      g.rot = Vec4(N(rng), N(rng), N(rng), N(rng)).normalized();
    }
    Vec3 rgb = patch_color;
    if (spec.patch_size == 1) {
      rgb = Vec3(0.1 + 0.8 * U(rng), 0.1 + 0.8 * U(rng), 0.1 + 0.8 * U(rng));
    } else {
      for (int k = 0; k < 3; ++k) rgb[k] = std::clamp(rgb[k] + spec.color_jitter * N(rng), 0.05, 0.95);
    }
    for (int k = 0; k < 3; ++k) g.sh(0, k) = rgb_to_sh_dc(rgb[k]);
    g.logit_opacity = logit(0.7 + 0.299 * U(rng));
    cloud.push_back(g);
    colors.push_back(rgb);
  }

  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "hidden");
  if (spec.with_mask) fs::create_directories(out_dir / "masks");

  SceneManifest m;
  m.scene = "synth_seed" + std::to_string(spec.seed);
  m.width = spec.width;
  m.height = spec.height;
  m.points = "points.ply";
  const double pitch = 2.0 * kPi / spec.width;
  for (int i = 0; i < spec.n_views; ++i) {
    const CameraPose& pose = result.poses[i];
    Image img = render(cloud, pose, Vec3::Zero()).color;
    ManifestView v;
    v.name = view_name(i);
    v.image = fs::path("images") / (v.name + ".png");
    v.q = rotation_to_quat(pose.R);
    v.t = pose.t;
    v.split = spec.test_every > 0 && i % spec.test_every == spec.test_every - 1 ? Split::kTest : Split::kTrain;
    if (spec.with_mask) {
      const Vec3 stand = stand_direction(i);
      Image mask(spec.width, spec.height, 1, 1.0);
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          const double ang = std::acos(std::clamp(pixel_center_ray(x, y, geom).dot(stand), -1.0, 1.0));
          if (ang <= kStandRadius) {
            const double shade = 1.0 - 0.3 * ang / kStandRadius;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = kStandColor[c] * shade;
          }
          if (ang <= kStandRadius + 2.0 * pitch) mask.at(x, y) = 0.0;
        }
      }
      v.mask = fs::path("masks") / (v.name + ".png");
      write_png(out_dir / *v.mask, mask, 8);
    }
    write_png(out_dir / v.image, img, 16);
    m.views.push_back(v);
  }

  // Sparse stand-in for SfM: a noisy subset of the true centers.
  std::vector<int> order(spec.n_gaussians);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int keep = std::max(1, static_cast<int>(std::lround(0.3 * spec.n_gaussians)));
  order.resize(keep);
  std::sort(order.begin(), order.end());
  PointCloud pc;
  for (int idx : order) {
    pc.xyz.push_back(cloud[idx].mu + 0.01 * extent * Vec3(N(rng), N(rng), N(rng)));
    pc.rgb.push_back(colors[idx]);
  }
  write_points_ply(out_dir / m.points, pc);
  save_checkpoint(cloud, out_dir / "hidden" / "ground_truth.ply");
  result.manifest = out_dir / "scene.json";
  write_manifest(result.manifest, m);
  return result;
}

}  // namespace erpgs
