#pragma once

// Test-only reference implementations. Nothing here calls the tiled
// compositor or the analytic backward pass.

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "erpgs/gaussian.hpp"
#include "erpgs/image.hpp"
#include "erpgs/rasterizer.hpp"

namespace erpgs::testing {

struct NaiveRender {
  Image color, normal, depth, weight_sum, transmittance;
};

/// Per-pixel full sort and blend over every splat, no tiles, no early stop.
inline NaiveRender naive_composite(const std::vector<Splat2D>& splats, const ErpImageGeom& g,
                                   const Vec3& bg) {
  NaiveRender out{Image(g.width, g.height, 3), Image(g.width, g.height, 3), Image(g.width, g.height, 1),
                  Image(g.width, g.height, 1), Image(g.width, g.height, 1)};
  std::vector<const Splat2D*> order;
  for (const auto& s : splats) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->depth < b->depth; });
  for (int v = 0; v < g.height; ++v) {
    for (int u = 0; u < g.width; ++u) {
      const Vec2 px(u + 0.5, v + 0.5);
      double T = 1.0, D = 0.0, S = 0.0;
      Vec3 C = Vec3::Zero(), N = Vec3::Zero();
      for (const Splat2D* s : order) {
        double du = px.x() - s->center_px.x();
        while (du >= 0.5 * g.width) du -= g.width;
        while (du < -0.5 * g.width) du += g.width;
        const double dv = px.y() - s->center_px.y();
        const double q = s->conic[0] * du * du + 2 * s->conic[1] * du * dv + s->conic[2] * dv * dv;
        if (q > 9.0) continue;
        const double a = std::min(0.999, s->opacity * std::exp(-0.5 * q));
        C += a * T * s->rgb;
        N += a * T * s->normal_cam;
        D += a * T * s->depth;
        S += a * T;
        T *= 1 - a;
      }
      C += T * bg;
      for (int c = 0; c < 3; ++c) {
        out.color.at(u, v, c) = C[c];
        out.normal.at(u, v, c) = N[c];
      }
      out.weight_sum.at(u, v) = S;
      out.transmittance.at(u, v) = T;
      if (S >= 1e-3) out.depth.at(u, v) = D / std::max(std::abs(N.dot(pixel_center_ray(u, v, g))), 1e-4);
    }
  }
  return out;
}

/// Central differences of f over every raw parameter of every Gaussian.
inline std::vector<Gaussian3D> finite_difference(const std::function<double(const GaussianCloud&)>& f,
                                                 const GaussianCloud& cloud, double h) {
  std::vector<Gaussian3D> out(cloud.size(), Gaussian3D::zeros());
  GaussianCloud work = cloud;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < kParamsPerGaussian; ++k) {
      double& p = param_at(work[i], k);
      const double orig = p;
      p = orig + h;
      const double fp = f(work);
      p = orig - h;
      const double fm = f(work);
      p = orig;
      param_at(out[i], k) = (fp - fm) / (2 * h);
    }
  }
  return out;
}

struct GradientMismatch {
  std::size_t gaussian;
  int param;
  double analytic;
  double numeric;
};

/// Coordinates where |fd| > min_abs and the relative error exceeds rel_tol.
inline std::vector<GradientMismatch> compare_gradients(const std::vector<Gaussian3D>& analytic,
                                                       const std::vector<Gaussian3D>& numeric,
                                                       double rel_tol, double min_abs,
                                                       int* checked = nullptr) {
  std::vector<GradientMismatch> bad;
  int n = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    auto a = analytic[i];
    auto fd = numeric[i];
    for (int k = 0; k < kParamsPerGaussian; ++k) {
      const double av = param_at(a, k), nv = param_at(fd, k);
      if (std::abs(nv) <= min_abs) continue;
      ++n;
      if (std::abs(av - nv) / std::abs(nv) >= rel_tol) bad.push_back({i, k, av, nv});
    }
  }
  if (checked) *checked = n;
  return bad;
}

inline Vec4 random_unit_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec4 q(n(rng), n(rng), n(rng), n(rng));
  return q / q.norm();
}

/// A few Gaussians scattered around a camera at the origin, large enough to
/// cover several pixels of a 32×16 image. Opacities stay below the alpha cap.
inline GaussianCloud random_scene(std::mt19937_64& rng, int count, int sh_degree = 0) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  GaussianCloud cloud(sh_degree);
  cloud.set_active_sh_degree(sh_degree);
  for (int i = 0; i < count; ++i) {
    Gaussian3D g;
    const double lon = -kPi + 2 * kPi * U(rng);
    const double lat = (U(rng) - 0.5) * 1.6;
    const double r = 2.0 + 2.0 * U(rng);
    g.mu = r * Vec3(std::cos(lat) * std::sin(lon), std::sin(lat), std::cos(lat) * std::cos(lon));
    g.log_scale = Vec3(std::log(0.3 + 0.5 * U(rng)), std::log(0.3 + 0.5 * U(rng)), std::log(0.05 + 0.1 * U(rng)));
    g.rot = random_unit_quat(rng) * (0.8 + 0.4 * U(rng));
    g.logit_opacity = logit(0.3 + 0.55 * U(rng));
    for (int k = 0; k < sh_coeff_count(sh_degree); ++k) {
      for (int c = 0; c < 3; ++c) g.sh(k, c) = k == 0 ? rgb_to_sh_dc(0.15 + 0.7 * U(rng)) : 0.2 * (U(rng) - 0.5);
    }
    cloud.push_back(g);
  }
  return cloud;
}

}  // namespace erpgs::testing
