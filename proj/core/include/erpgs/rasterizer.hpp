#pragma once

#include <array>
#include <vector>

#include "erpgs/gaussian.hpp"
#include "erpgs/image.hpp"

namespace erpgs {

inline constexpr double kNearClip = 0.01;
inline constexpr double kMinOpacity = 1.0 / 255.0;
inline constexpr double kAlphaCap = 0.999;
inline constexpr double kCutoffMahalanobisSq = 9.0;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kDepthDenominatorFloor = 1e-4;
inline constexpr double kMinDepthCoverage = 1e-3;
inline constexpr int kTileSize = 16;

/// A Gaussian projected into one view.
struct Splat2D {
  Vec2 center_px = Vec2::Zero();
  /// Inverse projected covariance (a, b, c) for [[a, b], [b, c]], pixel^-2.
  std::array<double, 3> conic{};
  /// Half extents of the 3-sigma bounding box, pixels.
  Vec2 extent = Vec2::Zero();
  double depth = 0.0;
  Vec3 normal_cam = Vec3::Zero();
  double opacity = 0.0;
  Vec3 rgb = Vec3::Zero();
  int source_index = -1;
};

struct RenderOutput {
  Image color;         // H×W×3
  Image normal;        // H×W×3, camera frame, alpha blended, not renormalized
  Image depth;         // H×W, distance along the ray, 0 where uncovered
  Image weight_sum;    // H×W, sum of blend weights
  Image raw_depth;     // H×W, sum of d_i w_i before the normal correction
  Image transmittance; // H×W, transmittance left after the last blended splat
};

/// Per-pixel derivatives of a scalar loss with respect to the rendered maps.
struct RenderGrads {
  Image color;   // H×W×3
  Image normal;  // H×W×3
  Image depth;   // H×W

  static RenderGrads zeros(const ErpImageGeom& g) {
    return {Image(g.width, g.height, 3), Image(g.width, g.height, 3), Image(g.width, g.height, 1)};
  }
};

struct CloudGradients {
  std::vector<Gaussian3D> params;
  /// Norm of the splat-center gradient in normalized image units, per Gaussian.
  std::vector<double> screen_grad_norm;
  std::vector<char> visible;
};

struct RenderOptions {
  /// Fixed-order gradient reduction; bit-stable results across runs.
  bool deterministic = true;
};

/// Projected, culled, depth-sorted splats plus their tile bins.
class SplatFrame {
 public:
  SplatFrame(std::vector<Splat2D> splats, const ErpImageGeom& geom);

  const std::vector<Splat2D>& splats() const { return splats_; }
  const ErpImageGeom& geom() const { return geom_; }
  int tiles_x() const { return tiles_x_; }
  int tiles_y() const { return tiles_y_; }
  int tile_count() const { return tiles_x_ * tiles_y_; }
  /// Splat indices overlapping tile t, front to back.
  std::span<const int> tile_splats(int t) const {
    return {tile_indices_.data() + tile_offsets_[t], tile_indices_.data() + tile_offsets_[t + 1]};
  }

 private:
  std::vector<Splat2D> splats_;
  ErpImageGeom geom_;
  int tiles_x_ = 0;
  int tiles_y_ = 0;
  std::vector<int> tile_offsets_;
  std::vector<int> tile_indices_;
};

/// View direction color of Gaussian g seen from `cam_center`, before clamping.
Vec3 evaluate_color(const Gaussian3D& g, const Vec3& cam_center, int sh_degree);

std::vector<Splat2D> prepare_splats(const GaussianCloud& cloud, const CameraPose& pose);
SplatFrame prepare_frame(const GaussianCloud& cloud, const CameraPose& pose);

/// Opacity of a splat at continuous pixel `px` (horizontal offset wrapped),
/// with the 0.999 cap. Ignores the 3-sigma cutoff.
double alpha_at(const Splat2D& splat, const Vec2& px, int image_width);

RenderOutput render(const SplatFrame& frame, const Vec3& background);
RenderOutput render(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& background);

struct BlendStep {
  int splat = -1;
  double alpha = 0.0;
  double transmittance_before = 1.0;
  double weight = 0.0;
};

/// The compositing sequence at integer pixel (u, v), front to back.
std::vector<BlendStep> composite_trace(const SplatFrame& frame, int u, int v);

CloudGradients render_backward(const SplatFrame& frame, const RenderOutput& forward,
                               const GaussianCloud& cloud, const CameraPose& pose,
                               const Vec3& background, const RenderGrads& upstream,
                               const RenderOptions& options = {});
CloudGradients render_backward(const GaussianCloud& cloud, const CameraPose& pose,
                               const Vec3& background, const RenderGrads& upstream,
                               const RenderOptions& options = {});

/// Adds this view's screen-space gradient norms to the cloud's densification
/// statistics (one count per Gaussian visible in the view).
void accumulate_screen_gradients(GaussianCloud& cloud, const CloudGradients& grads);

}  // namespace erpgs
