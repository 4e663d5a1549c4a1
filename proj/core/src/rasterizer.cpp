#include "erpgs/rasterizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include <Eigen/LU>
#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>

namespace erpgs {
namespace {

// Accumulated per-splat gradient: center (2), conic (3), opacity, rgb (3),
// camera-frame normal (3), depth.
constexpr int kSplatGradSize = 13;
using SplatGrad = std::array<double, kSplatGradSize>;
enum : int { kGCenter = 0, kGConic = 2, kGOpacity = 5, kGRgb = 6, kGNormal = 9, kGDepth = 12 };

struct Contribution {
  int local;  // index into the tile list
  double alpha;
  double transmittance;
  double gauss;  // exp(-q/2)
  double du, dv;
  bool capped;
};

inline double mahalanobis_sq(const Splat2D& s, double du, double dv) {
  return s.conic[0] * du * du + 2.0 * s.conic[1] * du * dv + s.conic[2] * dv * dv;
}

struct PreparedGaussian {
  Vec3 mc;
  Mat23 J;
  Mat3 rot;  // R(q̂)
  Vec3 scale;
  Mat3 sigma;
  Mat2 cov2;
  Mat2 conic;
  int axis;
  double normal_sign;
  Vec3 dir;
  double dir_len;
  Vec3 rgb_raw;
};

// Shared between forward preparation and the backward chain rule.
bool prepare_gaussian(const Gaussian3D& g, const CameraPose& pose, const Vec3& cam_center,
                      int sh_degree, PreparedGaussian& out) {
  out.mc = pose.to_camera(g.mu);
  const double d = out.mc.norm();
  if (!(d >= kNearClip)) return false;
  if (out.mc.x() * out.mc.x() + out.mc.z() * out.mc.z() <= kPoleEpsilon * kPoleEpsilon) return false;
  out.J = erp_jacobian(out.mc, pose.geom);
  out.rot = quat_to_rotation(g.unit_rot());
  out.scale = g.scale();
  const Mat3 M3 = out.rot * out.scale.asDiagonal();
  out.sigma = M3 * M3.transpose();
  const Mat23 M = out.J * pose.R;
  out.cov2 = M * out.sigma * M.transpose();
  out.cov2(0, 1) = out.cov2(1, 0) = 0.5 * (out.cov2(0, 1) + out.cov2(1, 0));
  out.cov2(0, 0) += kBlurFloor;
  out.cov2(1, 1) += kBlurFloor;
  out.conic = out.cov2.inverse();
  out.axis = smallest_axis(g.log_scale);
  out.normal_sign = out.rot.col(out.axis).dot(cam_center - g.mu) < 0.0 ? -1.0 : 1.0;
  const Vec3 v = g.mu - cam_center;
  out.dir_len = v.norm();
  out.dir = v / out.dir_len;
  const auto basis = sh_basis(out.dir, sh_degree);
  out.rgb_raw = Vec3::Constant(0.5);
  for (int k = 0; k < sh_coeff_count(sh_degree); ++k) out.rgb_raw += basis[k] * g.sh.row(k).transpose();
  return true;
}

void composite_pixel(const SplatFrame& frame, std::span<const int> list, double pu, double pv,
                     std::vector<Contribution>* trace, double& T, Vec3& C, Vec3& N, double& D,
                     double& S) {
  const auto& splats = frame.splats();
  const double W = frame.geom().width;
  T = 1.0;
  for (int li = 0; li < static_cast<int>(list.size()); ++li) {
    const Splat2D& s = splats[list[li]];
    const double du = wrap_offset(pu - s.center_px.x(), W);
    const double dv = pv - s.center_px.y();
    const double q = mahalanobis_sq(s, du, dv);
    if (q > kCutoffMahalanobisSq) continue;
    const double gauss = std::exp(-0.5 * q);
    double alpha = s.opacity * gauss;
    const bool capped = alpha > kAlphaCap;
    if (capped) alpha = kAlphaCap;
    const double w = alpha * T;
    if (trace) trace->push_back({li, alpha, T, gauss, du, dv, capped});
    C += w * s.rgb;
    N += w * s.normal_cam;
    D += w * s.depth;
    S += w;
    T *= 1.0 - alpha;
    if (T < kTransmittanceStop) break;
  }
}

template <typename Fn>
void for_each_tile(int tile_count, Fn&& fn) {
  tbb::parallel_for(tbb::blocked_range<int>(0, tile_count), [&](const tbb::blocked_range<int>& r) {
    for (int t = r.begin(); t != r.end(); ++t) fn(t);
  });
}

}  // namespace

SplatFrame::SplatFrame(std::vector<Splat2D> splats, const ErpImageGeom& geom)
    : splats_(std::move(splats)), geom_(geom) {
  tiles_x_ = (geom.width + kTileSize - 1) / kTileSize;
  tiles_y_ = (geom.height + kTileSize - 1) / kTileSize;
  const int W = geom.width, H = geom.height;

  // Tile rows/columns touched by each splat's 3-sigma box, columns wrapping.
  std::vector<std::vector<int>> bins(tile_count());
  std::vector<char> cols(tiles_x_);
  for (int i = 0; i < static_cast<int>(splats_.size()); ++i) {
    const Splat2D& s = splats_[i];
    const int v0 = std::max(0, static_cast<int>(std::ceil(s.center_px.y() - s.extent.y() - 0.5)));
    const int v1 = std::min(H - 1, static_cast<int>(std::floor(s.center_px.y() + s.extent.y() - 0.5)));
    if (v0 > v1) continue;
    std::fill(cols.begin(), cols.end(), 0);
    if (2.0 * s.extent.x() >= W) {
      std::fill(cols.begin(), cols.end(), 1);
    } else {
      const int u0 = static_cast<int>(std::ceil(s.center_px.x() - s.extent.x() - 0.5));
      const int u1 = static_cast<int>(std::floor(s.center_px.x() + s.extent.x() - 0.5));
      for (int u = u0; u <= u1; ++u) cols[(((u % W) + W) % W) / kTileSize] = 1;
    }
    for (int ty = v0 / kTileSize; ty <= v1 / kTileSize; ++ty) {
      for (int tx = 0; tx < tiles_x_; ++tx) {
        if (cols[tx]) bins[ty * tiles_x_ + tx].push_back(i);
      }
    }
  }
  tile_offsets_.assign(tile_count() + 1, 0);
  for (int t = 0; t < tile_count(); ++t) {
    tile_offsets_[t + 1] = tile_offsets_[t] + static_cast<int>(bins[t].size());
  }
  tile_indices_.reserve(tile_offsets_.back());
  for (auto& b : bins) tile_indices_.insert(tile_indices_.end(), b.begin(), b.end());
}

Vec3 evaluate_color(const Gaussian3D& g, const Vec3& cam_center, int sh_degree) {
  const Vec3 dir = (g.mu - cam_center).normalized();
  const auto basis = sh_basis(dir, sh_degree);
  Vec3 rgb = Vec3::Constant(0.5);
  for (int k = 0; k < sh_coeff_count(sh_degree); ++k) rgb += basis[k] * g.sh.row(k).transpose();
  return rgb;
}

std::vector<Splat2D> prepare_splats(const GaussianCloud& cloud, const CameraPose& pose) {
  const Vec3 cam_center = pose.center();
  const int sh_degree = cloud.active_sh_degree();
  std::vector<Splat2D> out;
  out.reserve(cloud.size());
  PreparedGaussian p;
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
    const Gaussian3D& g = cloud[i];
    const double o = g.opacity();
    if (o < kMinOpacity) continue;
    if (!prepare_gaussian(g, pose, cam_center, sh_degree, p)) continue;
    Splat2D s;
    const PixelCoord c = project_to_pixel(p.mc, pose.geom);
    s.center_px = {c.u, c.v};
    s.conic = {p.conic(0, 0), 0.5 * (p.conic(0, 1) + p.conic(1, 0)), p.conic(1, 1)};
    const double r = std::sqrt(kCutoffMahalanobisSq);
    s.extent = {r * std::sqrt(p.cov2(0, 0)), r * std::sqrt(p.cov2(1, 1))};
    s.depth = p.mc.norm();
    s.normal_cam = pose.R * (p.normal_sign * p.rot.col(p.axis));
    s.opacity = o;
    s.rgb = p.rgb_raw.cwiseMax(0.0).cwiseMin(1.0);
    s.source_index = i;
    out.push_back(s);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Splat2D& a, const Splat2D& b) { return a.depth < b.depth; });
  return out;
}

SplatFrame prepare_frame(const GaussianCloud& cloud, const CameraPose& pose) {
  return SplatFrame(prepare_splats(cloud, pose), pose.geom);
}

double alpha_at(const Splat2D& splat, const Vec2& px, int image_width) {
  const double du = wrap_offset(px.x() - splat.center_px.x(), image_width);
  const double dv = px.y() - splat.center_px.y();
  return std::min(kAlphaCap, splat.opacity * std::exp(-0.5 * mahalanobis_sq(splat, du, dv)));
}

RenderOutput render(const SplatFrame& frame, const Vec3& background) {
  const ErpImageGeom& g = frame.geom();
  RenderOutput out{Image(g.width, g.height, 3), Image(g.width, g.height, 3),
                   Image(g.width, g.height, 1), Image(g.width, g.height, 1),
                   Image(g.width, g.height, 1), Image(g.width, g.height, 1)};
  for_each_tile(frame.tile_count(), [&](int t) {
    const auto list = frame.tile_splats(t);
    const int tx = t % frame.tiles_x(), ty = t / frame.tiles_x();
    for (int v = ty * kTileSize; v < std::min(g.height, (ty + 1) * kTileSize); ++v) {
      for (int u = tx * kTileSize; u < std::min(g.width, (tx + 1) * kTileSize); ++u) {
        double T = 1.0, D = 0.0, S = 0.0;
        Vec3 C = Vec3::Zero(), N = Vec3::Zero();
        composite_pixel(frame, list, u + 0.5, v + 0.5, nullptr, T, C, N, D, S);
        C += T * background;
        for (int c = 0; c < 3; ++c) {
          out.color.at(u, v, c) = C[c];
          out.normal.at(u, v, c) = N[c];
        }
        out.raw_depth.at(u, v) = D;
        out.weight_sum.at(u, v) = S;
        out.transmittance.at(u, v) = T;
        if (S >= kMinDepthCoverage) {
          const double den = std::abs(N.dot(pixel_center_ray(u, v, g)));
          out.depth.at(u, v) = D / std::max(den, kDepthDenominatorFloor);
        }
      }
    }
  });
  return out;
}

RenderOutput render(const GaussianCloud& cloud, const CameraPose& pose, const Vec3& background) {
  return render(prepare_frame(cloud, pose), background);
}

std::vector<BlendStep> composite_trace(const SplatFrame& frame, int u, int v) {
  const int t = (v / kTileSize) * frame.tiles_x() + u / kTileSize;
  const auto list = frame.tile_splats(t);
  std::vector<Contribution> trace;
  double T = 1.0, D = 0.0, S = 0.0;
  Vec3 C = Vec3::Zero(), N = Vec3::Zero();
  composite_pixel(frame, list, u + 0.5, v + 0.5, &trace, T, C, N, D, S);
  std::vector<BlendStep> out;
  out.reserve(trace.size());
  for (const auto& c : trace) {
    out.push_back({list[c.local], c.alpha, c.transmittance, c.alpha * c.transmittance});
  }
  return out;
}

namespace {

// Chain rule from one splat's image-space gradient back to raw parameters.
void backprop_gaussian(const Gaussian3D& g, const CameraPose& pose, const Vec3& cam_center,
                       int sh_degree, const SplatGrad& sg, Gaussian3D& out) {
  PreparedGaussian p;
  prepare_gaussian(g, pose, cam_center, sh_degree, p);
  out = Gaussian3D::zeros();
  const Mat3& Rp = pose.R;

  // Color through clamp and SH.
  Vec3 g_raw = Vec3::Zero();
  for (int c = 0; c < 3; ++c) {
    if (p.rgb_raw[c] > 0.0 && p.rgb_raw[c] < 1.0) g_raw[c] = sg[kGRgb + c];
  }
  Vec3 g_mu = Vec3::Zero();
  const auto basis = sh_basis(p.dir, sh_degree);
  const int n_coeffs = sh_coeff_count(sh_degree);
  for (int k = 0; k < n_coeffs; ++k) out.sh.row(k) = basis[k] * g_raw.transpose();
  if (sh_degree > 0) {
    const auto dY = sh_basis_jacobian(p.dir, sh_degree);
    Vec3 g_dir = Vec3::Zero();
    for (int k = 1; k < n_coeffs; ++k) g_dir += g.sh.row(k).dot(g_raw) * dY.row(k).transpose();
    g_mu += (g_dir - p.dir * p.dir.dot(g_dir)) / p.dir_len;
  }

  const double o = g.opacity();
  out.logit_opacity = sg[kGOpacity] * o * (1.0 - o);

  Vec3 g_mc = sg[kGDepth] * p.mc / p.mc.norm();
  g_mc += p.J.transpose() * Vec2(sg[kGCenter], sg[kGCenter + 1]);

  Mat3 g_rot = Mat3::Zero();
  const Vec3 g_normal_world = Rp.transpose() * Vec3(sg[kGNormal], sg[kGNormal + 1], sg[kGNormal + 2]);
  g_rot.col(p.axis) += p.normal_sign * g_normal_world;

  // conic = cov2^-1, cov2 = M Sigma M^T + floor, M = J Rp.
  Mat2 g_conic;
  g_conic << sg[kGConic], 0.5 * sg[kGConic + 1], 0.5 * sg[kGConic + 1], sg[kGConic + 2];
  const Mat2 g_cov2 = -p.conic * g_conic * p.conic;
  const Mat23 M = p.J * Rp;
  const Mat3 g_sigma = M.transpose() * g_cov2 * M;
  const Mat23 g_M = 2.0 * g_cov2 * M * p.sigma;
  const Mat23 g_J = g_M * Rp.transpose();
  const auto dJ = erp_jacobian_derivatives(p.mc, pose.geom);
  for (int k = 0; k < 3; ++k) g_mc[k] += g_J.cwiseProduct(dJ[k]).sum();
  g_mu += Rp.transpose() * g_mc;
  out.mu = g_mu;

  // Sigma = (Rq S)(Rq S)^T.
  const Mat3 M3 = p.rot * p.scale.asDiagonal();
  const Mat3 g_M3 = 2.0 * g_sigma * M3;
  for (int j = 0; j < 3; ++j) {
    out.log_scale[j] = g_M3.col(j).dot(p.rot.col(j)) * p.scale[j];
    g_rot.col(j) += g_M3.col(j) * p.scale[j];
  }
  const double qn = g.rot.norm();
  const Vec4 qh = g.rot / qn;
  const auto dR = quat_to_rotation_derivatives(qh);
  Vec4 g_qh;
  for (int k = 0; k < 4; ++k) g_qh[k] = g_rot.cwiseProduct(dR[k]).sum();
  out.rot = (g_qh - qh * qh.dot(g_qh)) / qn;
}

}  // namespace

CloudGradients render_backward(const SplatFrame& frame, const RenderOutput& forward,
                               const GaussianCloud& cloud, const CameraPose& pose,
                               const Vec3& background, const RenderGrads& upstream,
                               const RenderOptions& options) {
  const ErpImageGeom& geom = frame.geom();
  const auto& splats = frame.splats();
  std::vector<SplatGrad> splat_grads(splats.size(), SplatGrad{});

  // Deterministic mode keeps one gradient block per tile and reduces them in
  // tile order afterwards; fast mode adds straight into splat_grads.
  std::vector<std::vector<SplatGrad>> tile_grads;
  if (options.deterministic) tile_grads.resize(frame.tile_count());

  for_each_tile(frame.tile_count(), [&](int t) {
    const auto list = frame.tile_splats(t);
    if (list.empty()) return;
    std::vector<SplatGrad> local(list.size(), SplatGrad{});
    std::vector<Contribution> trace;
    const int tx = t % frame.tiles_x(), ty = t / frame.tiles_x();
    bool touched = false;
    for (int v = ty * kTileSize; v < std::min(geom.height, (ty + 1) * kTileSize); ++v) {
      for (int u = tx * kTileSize; u < std::min(geom.width, (tx + 1) * kTileSize); ++u) {
        const double* gc = upstream.color.pixel(u, v);
        const double* gn_in = upstream.normal.pixel(u, v);
        const double g_depth = upstream.depth.at(u, v);
        Vec3 gC(gc[0], gc[1], gc[2]);
        Vec3 gN(gn_in[0], gn_in[1], gn_in[2]);
        double gD = 0.0;
        if (forward.weight_sum.at(u, v) >= kMinDepthCoverage && g_depth != 0.0) {
          const Vec3 ray = pixel_center_ray(u, v, geom);
          const double* np = forward.normal.pixel(u, v);
          const double den = np[0] * ray[0] + np[1] * ray[1] + np[2] * ray[2];
          const double a = std::abs(den);
          if (a > kDepthDenominatorFloor) {
            gD = g_depth / a;
            gN -= g_depth * forward.raw_depth.at(u, v) / (a * a) * (den < 0.0 ? -1.0 : 1.0) * ray;
          } else {
            gD = g_depth / kDepthDenominatorFloor;
          }
        }
        if (gC.isZero(0.0) && gN.isZero(0.0) && gD == 0.0) continue;

        trace.clear();
        double T = 1.0, D = 0.0, S = 0.0;
        Vec3 C = Vec3::Zero(), N = Vec3::Zero();
        composite_pixel(frame, list, u + 0.5, v + 0.5, &trace, T, C, N, D, S);
        if (trace.empty()) continue;
        touched = true;

        // Back to front: acc* hold the blended value behind each splat,
        // normalized by the transmittance in front of it.
        Vec3 accC = background, accN = Vec3::Zero();
        double accD = 0.0;
        for (int k = static_cast<int>(trace.size()) - 1; k >= 0; --k) {
          const Contribution& c = trace[k];
          const Splat2D& s = splats[list[c.local]];
          SplatGrad& sg = local[c.local];
          const double w = c.alpha * c.transmittance;
          for (int ch = 0; ch < 3; ++ch) {
            sg[kGRgb + ch] += w * gC[ch];
            sg[kGNormal + ch] += w * gN[ch];
          }
          sg[kGDepth] += w * gD;
          const double g_alpha = c.transmittance * (gC.dot(s.rgb - accC) + gN.dot(s.normal_cam - accN) +
                                                    gD * (s.depth - accD));
          accC = c.alpha * s.rgb + (1.0 - c.alpha) * accC;
          accN = c.alpha * s.normal_cam + (1.0 - c.alpha) * accN;
          accD = c.alpha * s.depth + (1.0 - c.alpha) * accD;
          if (c.capped) continue;
          sg[kGOpacity] += g_alpha * c.gauss;
          const double g_q = -0.5 * c.alpha * g_alpha;
          sg[kGConic + 0] += g_q * c.du * c.du;
          sg[kGConic + 1] += g_q * 2.0 * c.du * c.dv;
          sg[kGConic + 2] += g_q * c.dv * c.dv;
          // d q / d center = -2 A delta
          sg[kGCenter + 0] -= g_q * 2.0 * (s.conic[0] * c.du + s.conic[1] * c.dv);
          sg[kGCenter + 1] -= g_q * 2.0 * (s.conic[1] * c.du + s.conic[2] * c.dv);
        }
      }
    }
    if (!touched) return;
    if (options.deterministic) {
      tile_grads[t] = std::move(local);
    } else {
      for (std::size_t i = 0; i < list.size(); ++i) {
        for (int k = 0; k < kSplatGradSize; ++k) {
          if (local[i][k] != 0.0) {
            std::atomic_ref<double>(splat_grads[list[i]][k]).fetch_add(local[i][k],
                                                                       std::memory_order_relaxed);
          }
        }
      }
    }
  });

  if (options.deterministic) {
    for (int t = 0; t < frame.tile_count(); ++t) {
      if (tile_grads[t].empty()) continue;
      const auto list = frame.tile_splats(t);
      for (std::size_t i = 0; i < list.size(); ++i) {
        for (int k = 0; k < kSplatGradSize; ++k) splat_grads[list[i]][k] += tile_grads[t][i][k];
      }
    }
  }

  CloudGradients out;
  out.params.assign(cloud.size(), Gaussian3D::zeros());
  out.screen_grad_norm.assign(cloud.size(), 0.0);
  out.visible.assign(cloud.size(), 0);
  const Vec3 cam_center = pose.center();
  tbb::parallel_for(std::size_t{0}, splats.size(), [&](std::size_t i) {
    const int src = splats[i].source_index;
    backprop_gaussian(cloud[src], pose, cam_center, cloud.active_sh_degree(), splat_grads[i],
                      out.params[src]);
    out.visible[src] = 1;
    out.screen_grad_norm[src] = std::hypot(splat_grads[i][kGCenter] * 0.5 * geom.width,
                                           splat_grads[i][kGCenter + 1] * 0.5 * geom.height);
  });
  return out;
}

CloudGradients render_backward(const GaussianCloud& cloud, const CameraPose& pose,
                               const Vec3& background, const RenderGrads& upstream,
                               const RenderOptions& options) {
  const SplatFrame frame = prepare_frame(cloud, pose);
  const RenderOutput fwd = render(frame, background);
  return render_backward(frame, fwd, cloud, pose, background, upstream, options);
}

void accumulate_screen_gradients(GaussianCloud& cloud, const CloudGradients& grads) {
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!grads.visible[i]) continue;
    cloud.grad_accum()[i] += grads.screen_grad_norm[i];
    cloud.grad_count()[i] += 1;
  }
}

}  // namespace erpgs
