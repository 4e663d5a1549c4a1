#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "erpgs/gaussian.hpp"
#include "erpgs/image.hpp"
#include "erpgs/losses.hpp"

namespace erpgs {

inline constexpr int kManifestVersion = 1;
inline constexpr int kCheckpointVersion = 1;
inline constexpr double kPoseTolerance = 1e-4;

struct PointCloud {
  std::vector<Vec3> xyz;
  std::vector<Vec3> rgb;  // [0,1]
  std::size_t size() const { return xyz.size(); }
};

PointCloud read_points_ply(const std::filesystem::path& path);
void write_points_ply(const std::filesystem::path& path, const PointCloud& points);

/// Binary little-endian PLY in the usual splatting layout (x, y, z, nx, ny,
/// nz, f_dc_*, f_rest_*, opacity, scale_*, rot_*), stored as doubles so the
/// round trip is exact. Float files written by other tools load as well.
void save_checkpoint(const GaussianCloud& cloud, const std::filesystem::path& path);
GaussianCloud load_checkpoint(const std::filesystem::path& path);

enum class Split { kTrain, kTest };

struct ManifestView {
  std::string name;
  std::filesystem::path image;  // relative to the manifest directory
  std::optional<std::filesystem::path> mask;
  Vec4 q = Vec4(1, 0, 0, 0);  // world to camera rotation (w, x, y, z)
  Vec3 t = Vec3::Zero();      // world to camera translation
  Split split = Split::kTrain;
};

struct SceneManifest {
  int version = kManifestVersion;
  std::string scene;
  int width = 0;
  int height = 0;
  std::filesystem::path points;  // relative, may be empty
  std::vector<ManifestView> views;
  std::filesystem::path base_dir;  // directory of the manifest file, not serialized

  ErpImageGeom geom() const { return {width, height}; }
};

SceneManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const SceneManifest& manifest);

/// Builds a pose from a world-to-camera quaternion and translation. The
/// quaternion must be unit length within kPoseTolerance.
CameraPose make_pose(const Vec4& q, const Vec3& t, const ErpImageGeom& geom, const std::string& where);

/// Standalone pose file: {"width", "height", "q" or "R", "t"}, world to camera.
CameraPose read_pose_file(const std::filesystem::path& path);

struct TrainSample {
  std::string name;
  Image image;  // H×W×3 in [0,1]
  int bit_depth = 8;
  CameraPose pose;
  PixelWeightMask wm;  // the weight map is shared by every sample of a dataset
  bool has_mask = false;
  Split split = Split::kTrain;
};

struct Dataset {
  SceneManifest manifest;
  std::vector<TrainSample> samples;
  PointCloud points;

  std::vector<int> indices(Split split) const;
};

Dataset load_scene(const std::filesystem::path& manifest_path);

enum class CameraPath { kRing, kSpiral };

struct SynthSpec {
  std::uint64_t seed = 7;
  int n_gaussians = 300;
  int n_views = 20;
  int width = 256;
  int height = 128;
  CameraPath path = CameraPath::kSpiral;
  bool with_mask = false;
  int test_every = 5;  // view i is held out when i % test_every == test_every - 1

  // Scene layout in world units.
  double camera_radius = 1.0;
  double shell_inner = 2.0;
  double shell_thickness = 2.0;
  double scale_min = 0.06;  // range of the two large axes of each flat Gaussian
  double scale_max = 0.15;
  bool surface_aligned = true;  // smallest axis along the patch normal
  // Gaussians come in flat patches of `patch_size` members sharing a base color.
  int patch_size = 10;
  double patch_radius = 0.3;
  double color_jitter = 0.03;

  void validate() const;
};

struct SynthResult {
  std::filesystem::path manifest;
  GaussianCloud hidden;
  std::vector<CameraPose> poses;
};

std::vector<CameraPose> synth_camera_path(const SynthSpec& spec);

/// Radius of the bounding sphere of the camera centers (about their mean), times 1.1.
double camera_extent(const std::vector<CameraPose>& poses);

/// Writes images/, masks/ (with_mask only), points.ply, scene.json and the
/// hidden ground-truth cloud hidden/ground_truth.ply under `out_dir`.
SynthResult synth_scene(const SynthSpec& spec, const std::filesystem::path& out_dir);

struct ColmapImport {
  std::filesystem::path images_txt;
  std::filesystem::path points3d_txt;
  std::filesystem::path image_dir;  // referenced from the manifest as given
  std::filesystem::path out_dir;
  std::string scene = "colmap";
  int width = 0;  // 0: taken from cameras.txt next to images.txt, then from the first PNG
  int height = 0;
  int test_every = 8;  // 0 puts every view in the training split
};

/// Converts COLMAP text output into scene.json + points.ply in out_dir.
std::filesystem::path convert_colmap(const ColmapImport& in);

}  // namespace erpgs
