#include "erpgs/geometry_reg.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>

namespace erpgs {
namespace {

constexpr double kMinCrossNorm = 1e-12;
constexpr double kMinNormalNorm = 1e-12;

bool taps_positive(const BilinearTap& tap, const Image& depth) {
  const auto d = depth.data();
  for (int k = 0; k < 4; ++k) {
    if (tap.weight[k] > 0.0 && !(d[tap.index[k]] > 0.0)) return false;
  }
  return true;
}

struct CrossTerms {
  std::array<Vec3, 4> P;
  Vec3 a, b, raw;
  double sign;
};

// P(right) - P(left), P(down) - P(up) and their cross product at (u, v).
std::optional<CrossTerms> cross_terms(const Image& depth, const TangentStencil& st, int u, int v) {
  if (!st.valid_row(v) || !(depth.at(u, v) > 0.0)) return std::nullopt;
  CrossTerms ct;
  const auto& nb = st.neighbors(u, v);
  for (int k = 0; k < 4; ++k) {
    if (!taps_positive(nb[k].tap, depth)) return std::nullopt;
    ct.P[k] = nb[k].tap.sample(depth) * nb[k].ray;
  }
  ct.a = ct.P[0] - ct.P[1];
  ct.b = ct.P[2] - ct.P[3];
  ct.raw = ct.a.cross(ct.b);
  if (ct.raw.norm() < kMinCrossNorm) return std::nullopt;
  ct.sign = ct.raw.dot(-st.center_ray(u, v)) >= 0.0 ? 1.0 : -1.0;
  return ct;
}

}  // namespace

BilinearTap bilinear_tap(const PixelCoord& px, const ErpImageGeom& g) {
  const double x = px.u - 0.5, y = px.v - 0.5;
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  const int W = g.width, H = g.height;
  const int x0 = ((static_cast<int>(fx0) % W) + W) % W;
  const int x1 = (x0 + 1) % W;
  const int y0 = std::clamp(static_cast<int>(fy0), 0, H - 1);
  const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, H - 1);
  BilinearTap t;
  t.index = {y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1};
  t.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  return t;
}

TangentStencil::TangentStencil(const ErpImageGeom& g, NeighborVStep vstep, int pole_rows)
    : geom_(g), pole_rows_(std::max(pole_rows, 1)) {
  const std::size_t n = static_cast<std::size_t>(g.width) * g.height;
  neighbors_.resize(n);
  rays_.resize(n);
  for (int v = 0; v < g.height; ++v) {
    for (int u = 0; u < g.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * g.width + u;
      rays_[i] = pixel_center_ray(u, v, g);
      if (!valid_row(v)) continue;
      const auto px = tangent_neighbors(u, v, g, vstep);
      for (int k = 0; k < 4; ++k) {
        neighbors_[i][k] = {bilinear_tap(px[k], g), pixel_to_ray(px[k].u, px[k].v, g)};
      }
    }
  }
}

std::optional<Vec3> backproject(const Image& depth, const PixelCoord& px, const ErpImageGeom& g) {
  const BilinearTap tap = bilinear_tap(px, g);
  if (!taps_positive(tap, depth)) return std::nullopt;
  return tap.sample(depth) * pixel_to_ray(px.u, px.v, g);
}

NormalMap depth_normal_map(const Image& depth, const TangentStencil& stencil) {
  const ErpImageGeom& g = stencil.geom();
  NormalMap out{Image(g.width, g.height, 3), std::vector<char>(depth.pixel_count(), 0)};
  for (int v = 0; v < g.height; ++v) {
    for (int u = 0; u < g.width; ++u) {
      const auto ct = cross_terms(depth, stencil, u, v);
      if (!ct) continue;
      const Vec3 n = ct->sign * ct->raw.normalized();
      for (int c = 0; c < 3; ++c) out.normal.at(u, v, c) = n[c];
      out.valid[static_cast<std::size_t>(v) * g.width + u] = 1;
    }
  }
  return out;
}

NormalMap depth_normal_map(const Image& depth, const ErpImageGeom& g) {
  return depth_normal_map(depth, TangentStencil(g));
}

Image color_gradient_weight(const Image& rgb, const TangentStencil& stencil, DneWeightMode mode) {
  const ErpImageGeom& g = stencil.geom();
  Image luma(g.width, g.height, 1);
  for (int v = 0; v < g.height; ++v) {
    for (int u = 0; u < g.width; ++u) {
      const double* p = rgb.pixel(u, v);
      luma.at(u, v) = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  Image out(g.width, g.height, 1, mode == DneWeightMode::kEdgeAware ? 1.0 : 0.0);
  for (int v = 0; v < g.height; ++v) {
    if (!stencil.valid_row(v)) continue;
    for (int u = 0; u < g.width; ++u) {
      const auto& nb = stencil.neighbors(u, v);
      const double gx = 0.5 * (nb[0].tap.sample(luma) - nb[1].tap.sample(luma));
      const double gy = 0.5 * (nb[2].tap.sample(luma) - nb[3].tap.sample(luma));
      const double g2 = gx * gx + gy * gy;
      out.at(u, v) = mode == DneWeightMode::kEdgeAware ? std::exp(-kEdgeAwareSharpness * g2) : g2;
    }
  }
  return out;
}

Image dne_map(const Image& rendered_normal, const NormalMap& depth_normal, const Image& grad_weight) {
  const int W = rendered_normal.width(), H = rendered_normal.height();
  Image out(W, H, 1);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      if (!depth_normal.valid[static_cast<std::size_t>(v) * W + u]) continue;
      const Vec3 N(rendered_normal.pixel(u, v));
      const double nn = N.norm();
      if (nn < kMinNormalNorm) continue;
      const Vec3 Nd(depth_normal.normal.pixel(u, v));
      out.at(u, v) = grad_weight.at(u, v) * (Nd - N / nn).norm();
    }
  }
  return out;
}

void dne_backward(const Image& rendered_normal, const Image& depth, const NormalMap& depth_normal,
                  const Image& grad_weight, const TangentStencil& stencil, const Image& upstream,
                  Image& g_normal, Image& g_depth) {
  const ErpImageGeom& g = stencil.geom();
  auto gd = g_depth.data();
  for (int v = 0; v < g.height; ++v) {
    for (int u = 0; u < g.width; ++u) {
      const double up = upstream.at(u, v);
      if (up == 0.0 || !depth_normal.valid[static_cast<std::size_t>(v) * g.width + u]) continue;
      const Vec3 N(rendered_normal.pixel(u, v));
      const double nn = N.norm();
      if (nn < kMinNormalNorm) continue;
      const Vec3 Nhat = N / nn;
      const Vec3 Nd(depth_normal.normal.pixel(u, v));
      const Vec3 e = Nd - Nhat;
      const double en = e.norm();
      if (en == 0.0) continue;
      const Vec3 g_e = (up * grad_weight.at(u, v) / en) * e;

      // Rendered normal through the renormalization.
      const Vec3 g_nhat = -g_e;
      const Vec3 g_n = (g_nhat - Nhat * Nhat.dot(g_nhat)) / nn;
      for (int c = 0; c < 3; ++c) g_normal.at(u, v, c) += g_n[c];

      // Depth normal: normalize(sign * a x b), a = P_r - P_l, b = P_d - P_u.
      const auto ct = cross_terms(depth, stencil, u, v);
      if (!ct) continue;
      const double rn = ct->raw.norm();
      const Vec3 rhat = ct->raw / rn;
      const Vec3 g_raw = ct->sign * (g_e - rhat * rhat.dot(g_e)) / rn;
      const Vec3 g_a = ct->b.cross(g_raw);
      const Vec3 g_b = g_raw.cross(ct->a);
      const std::array<Vec3, 4> g_P{g_a, -g_a, g_b, -g_b};
      const auto& nb = stencil.neighbors(u, v);
      for (int k = 0; k < 4; ++k) {
        const double g_sample = g_P[k].dot(nb[k].ray);
        for (int j = 0; j < 4; ++j) gd[nb[k].tap.index[j]] += g_sample * nb[k].tap.weight[j];
      }
    }
  }
}

}  // namespace erpgs
