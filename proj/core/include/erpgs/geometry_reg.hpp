#pragma once

#include <array>
#include <optional>
#include <vector>

#include "erpgs/erp_camera.hpp"
#include "erpgs/image.hpp"

namespace erpgs {

/// Rows at the top and bottom of the image excluded from depth-normal
/// regularization.
inline constexpr int kDnePoleRows = 2;

/// Four-corner bilinear tap into a row-major H×W map. Columns wrap, rows clamp.
struct BilinearTap {
  std::array<int, 4> index{};
  std::array<double, 4> weight{};

  double sample(const Image& map) const {
    const auto data = map.data();
    return weight[0] * data[index[0]] + weight[1] * data[index[1]] + weight[2] * data[index[2]] +
           weight[3] * data[index[3]];
  }
};

BilinearTap bilinear_tap(const PixelCoord& px, const ErpImageGeom& g);

/// Tangent-plane neighbors (right, left, down, up) of every non-pole pixel,
/// with their bilinear taps and rays. Depends only on the image geometry.
class TangentStencil {
 public:
  struct Neighbor {
    BilinearTap tap;
    Vec3 ray;
  };

  explicit TangentStencil(const ErpImageGeom& g, NeighborVStep vstep = NeighborVStep::kDoublePitch,
                          int pole_rows = kDnePoleRows);

  const ErpImageGeom& geom() const { return geom_; }
  bool valid_row(int v) const { return v >= pole_rows_ && v < geom_.height - pole_rows_; }
  const std::array<Neighbor, 4>& neighbors(int u, int v) const {
    return neighbors_[static_cast<std::size_t>(v) * geom_.width + u];
  }
  const Vec3& center_ray(int u, int v) const { return rays_[static_cast<std::size_t>(v) * geom_.width + u]; }

 private:
  ErpImageGeom geom_;
  int pole_rows_;
  std::vector<std::array<Neighbor, 4>> neighbors_;
  std::vector<Vec3> rays_;
};

/// Camera-frame point seen at `px` given a depth map; nullopt when any
/// contributing depth sample is not positive.
std::optional<Vec3> backproject(const Image& depth, const PixelCoord& px, const ErpImageGeom& g);

struct NormalMap {
  Image normal;             // H×W×3, unit where valid
  std::vector<char> valid;  // H×W
};

/// Normals from the cross product of tangent-neighbor back-projections,
/// oriented toward the camera.
NormalMap depth_normal_map(const Image& depth, const TangentStencil& stencil);
NormalMap depth_normal_map(const Image& depth, const ErpImageGeom& g);

enum class DneWeightMode {
  kEdgeAware,  // exp(-k |grad I|^2): small across color edges
  kLiteral,    // |grad I|^2 as written
};

inline constexpr double kEdgeAwareSharpness = 50.0;

/// Per-pixel weight from the squared luma gradient along tangent directions.
Image color_gradient_weight(const Image& rgb, const TangentStencil& stencil,
                            DneWeightMode mode = DneWeightMode::kEdgeAware);

/// weight * |N_d - normalize(N)| on valid pixels, 0 elsewhere.
Image dne_map(const Image& rendered_normal, const NormalMap& depth_normal, const Image& grad_weight);

/// Gradient of sum_p upstream(p) * DNE(p) with respect to the rendered
/// normal map and the rendered depth map (added into g_normal, g_depth).
void dne_backward(const Image& rendered_normal, const Image& depth, const NormalMap& depth_normal,
                  const Image& grad_weight, const TangentStencil& stencil, const Image& upstream,
                  Image& g_normal, Image& g_depth);

}  // namespace erpgs
