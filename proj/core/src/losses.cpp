#include "erpgs/losses.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace erpgs {
namespace {

constexpr int kRadius = kSsimWindow / 2;

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kRadius;
    k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

const std::array<double, kSsimWindow>& window() {
  static const auto k = gaussian_window();
  return k;
}

int reflect_row(int v, int H) {
  const int period = 2 * H;
  int m = ((v % period) + period) % period;
  return m < H ? m : period - 1 - m;
}

/// Separable Gaussian blur on one H×W plane: circular in u, mirrored in v.
/// The horizontal pass is symmetric, so only the vertical pass needs a
/// distinct adjoint.
class PlaneBlur {
 public:
  PlaneBlur(int W, int H) : W_(W), H_(H), tmp_(static_cast<std::size_t>(W) * H) {
    rows_.resize(static_cast<std::size_t>(H) * kSsimWindow);
    for (int v = 0; v < H; ++v) {
      for (int k = 0; k < kSsimWindow; ++k) rows_[v * kSsimWindow + k] = reflect_row(v + k - kRadius, H);
    }
    cols_.resize(static_cast<std::size_t>(W) * kSsimWindow);
    for (int u = 0; u < W; ++u) {
      for (int k = 0; k < kSsimWindow; ++k) cols_[u * kSsimWindow + k] = (((u + k - kRadius) % W) + W) % W;
    }
  }

  void forward(const std::vector<double>& in, std::vector<double>& out) {
    horizontal(in, tmp_);
    out.assign(in.size(), 0.0);
    const auto& K = window();
    for (int v = 0; v < H_; ++v) {
      double* o = out.data() + static_cast<std::size_t>(v) * W_;
      for (int k = 0; k < kSsimWindow; ++k) {
        const double* s = tmp_.data() + static_cast<std::size_t>(rows_[v * kSsimWindow + k]) * W_;
        const double kk = K[k];
        for (int u = 0; u < W_; ++u) o[u] += kk * s[u];
      }
    }
  }

  void adjoint(const std::vector<double>& in, std::vector<double>& out) {
    std::fill(tmp_.begin(), tmp_.end(), 0.0);
    const auto& K = window();
    for (int v = 0; v < H_; ++v) {
      const double* s = in.data() + static_cast<std::size_t>(v) * W_;
      for (int k = 0; k < kSsimWindow; ++k) {
        double* o = tmp_.data() + static_cast<std::size_t>(rows_[v * kSsimWindow + k]) * W_;
        const double kk = K[k];
        for (int u = 0; u < W_; ++u) o[u] += kk * s[u];
      }
    }
    horizontal(tmp_, out);
  }

 private:
  void horizontal(const std::vector<double>& in, std::vector<double>& out) const {
    out.assign(in.size(), 0.0);
    const auto& K = window();
    for (int v = 0; v < H_; ++v) {
      const double* s = in.data() + static_cast<std::size_t>(v) * W_;
      double* o = out.data() + static_cast<std::size_t>(v) * W_;
      for (int u = 0; u < W_; ++u) {
        const int* c = cols_.data() + u * kSsimWindow;
        double acc = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) acc += K[k] * s[c[k]];
        o[u] = acc;
      }
    }
  }

  int W_, H_;
  std::vector<int> rows_, cols_;
  std::vector<double> tmp_;
};

std::vector<double> channel_plane(const Image& img, int c) {
  std::vector<double> p(img.pixel_count());
  const auto d = img.data();
  const int C = img.channels();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = d[i * C + c];
  return p;
}

struct SsimChannel {
  std::vector<double> mu_x, mu_y, exx, eyy, exy;
};

SsimChannel ssim_stats(PlaneBlur& blur, const std::vector<double>& x, const std::vector<double>& y) {
  SsimChannel s;
  const std::size_t n = x.size();
  std::vector<double> tmp(n);
  blur.forward(x, s.mu_x);
  blur.forward(y, s.mu_y);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] * x[i];
  blur.forward(tmp, s.exx);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] * y[i];
  blur.forward(tmp, s.eyy);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] * y[i];
  blur.forward(tmp, s.exy);
  return s;
}

void check_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": image shapes differ");
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda_ssim >= 0.0 && lambda_ssim <= 1.0) || !(lambda_dn >= 0.0) || !(lambda_f >= 0.0) ||
      !(lambda_s >= 0.0)) {
    throw std::invalid_argument("loss weights must be non-negative with lambda_ssim in [0, 1]");
  }
}

void PixelWeightMask::validate() const {
  if (!weight || !weight->same_shape(mask)) {
    throw std::invalid_argument("pixel weight and mask shapes differ");
  }
  double sum = 0.0;
  const auto w = weight->data();
  const auto m = mask.data();
  for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] * m[i];
  if (!(sum > 0.0)) throw std::invalid_argument("view is fully masked");
}

Image distortion_weight_map(const ErpImageGeom& g) {
  Image w(g.width, g.height, 1);
  for (int v = 0; v < g.height; ++v) {
    const double row = pixel_solid_angle_weight(0, v, g);
    for (int u = 0; u < g.width; ++u) w.at(u, v) = row;
  }
  return w;
}

Image ssim_map(const Image& a, const Image& b) {
  check_same(a, b, "ssim_map");
  const int W = a.width(), H = a.height(), C = a.channels();
  PlaneBlur blur(W, H);
  Image out(W, H, 1);
  auto o = out.data();
  for (int c = 0; c < C; ++c) {
    const SsimChannel s = ssim_stats(blur, channel_plane(a, c), channel_plane(b, c));
    for (std::size_t i = 0; i < o.size(); ++i) {
      const double mx = s.mu_x[i], my = s.mu_y[i];
      const double sxx = s.exx[i] - mx * mx, syy = s.eyy[i] - my * my, sxy = s.exy[i] - mx * my;
      const double num = (2.0 * mx * my + kSsimC1) * (2.0 * sxy + kSsimC2);
      const double den = (mx * mx + my * my + kSsimC1) * (sxx + syy + kSsimC2);
      o[i] += num / den / C;
    }
  }
  return out;
}

Image ssim_backward(const Image& a, const Image& b, const Image& upstream) {
  check_same(a, b, "ssim_backward");
  const int W = a.width(), H = a.height(), C = a.channels();
  PlaneBlur blur(W, H);
  Image grad(W, H, C);
  auto g = grad.data();
  const auto up = upstream.data();
  const std::size_t n = a.pixel_count();
  std::vector<double> d_mu(n), d_exx(n), d_exy(n), r_mu, r_exx, r_exy;
  for (int c = 0; c < C; ++c) {
    const auto x = channel_plane(a, c);
    const auto y = channel_plane(b, c);
    const SsimChannel s = ssim_stats(blur, x, y);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = up[i] / C;
      const double mx = s.mu_x[i], my = s.mu_y[i];
      const double sxx = s.exx[i] - mx * mx, syy = s.eyy[i] - my * my, sxy = s.exy[i] - mx * my;
      const double a1 = 2.0 * mx * my + kSsimC1, a2 = 2.0 * sxy + kSsimC2;
      const double b1 = mx * mx + my * my + kSsimC1, b2 = sxx + syy + kSsimC2;
      const double den = b1 * b2;
      const double ssim = a1 * a2 / den;
      const double ds_dsxx = -ssim / b2;
      const double ds_dsxy = 2.0 * a1 / den;
      const double ds_dmx = (2.0 * my * a2 - 2.0 * mx * ssim * b2) / den;
      // sxx = E[x^2] - mx^2 and sxy = E[xy] - mx my also depend on mx.
      d_mu[i] = u * (ds_dmx - 2.0 * mx * ds_dsxx - my * ds_dsxy);
      d_exx[i] = u * ds_dsxx;
      d_exy[i] = u * ds_dsxy;
    }
    blur.adjoint(d_mu, r_mu);
    blur.adjoint(d_exx, r_exx);
    blur.adjoint(d_exy, r_exy);
    for (std::size_t i = 0; i < n; ++i) {
      g[i * C + c] = r_mu[i] + 2.0 * x[i] * r_exx[i] + y[i] * r_exy[i];
    }
  }
  return grad;
}

Image cre_map(const Image& rendered, const Image& gt, double lambda_ssim) {
  check_same(rendered, gt, "cre_map");
  Image out(rendered.width(), rendered.height(), 1);
  auto o = out.data();
  const auto r = rendered.data();
  const auto t = gt.data();
  const int C = rendered.channels();
  for (std::size_t i = 0; i < o.size(); ++i) {
    double l1 = 0.0;
    for (int c = 0; c < C; ++c) l1 += std::abs(r[i * C + c] - t[i * C + c]);
    o[i] = (1.0 - lambda_ssim) * l1;
  }
  if (lambda_ssim > 0.0) {
    const Image s = ssim_map(rendered, gt);
    const auto sd = s.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += lambda_ssim * (1.0 - sd[i]);
  }
  return out;
}

double weighted_masked_mean(const Image& err, const PixelWeightMask& wm) {
  const auto e = err.data();
  const auto w = wm.weight->data();
  const auto m = wm.mask.data();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double wi = w[i] * m[i];
    num += wi * e[i];
    den += wi;
  }
  if (!(den > 0.0)) throw std::invalid_argument("weighted_masked_mean: zero total weight");
  return num / den;
}

ScaleLosses scale_losses(const GaussianCloud& cloud) {
  ScaleLosses out;
  if (cloud.empty()) return out;
  for (const Gaussian3D& g : cloud.gaussians()) {
    const Vec3 s = g.scale();
    out.scale += s.squaredNorm();
    out.flatten += s.minCoeff();
  }
  out.scale /= static_cast<double>(cloud.size());
  out.flatten /= static_cast<double>(cloud.size());
  return out;
}

void scale_losses_backward(const GaussianCloud& cloud, double coef_scale, double coef_flatten,
                           std::vector<Gaussian3D>& grads) {
  if (cloud.empty()) return;
  const double inv_n = 1.0 / static_cast<double>(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Gaussian3D& g = cloud[i];
    const Vec3 s = g.scale();
    grads[i].log_scale += coef_scale * inv_n * 2.0 * s.cwiseProduct(s);
    if (coef_flatten != 0.0) {
      const int k = smallest_axis(g.log_scale);
      grads[i].log_scale[k] += coef_flatten * inv_n * s[k];
    }
  }
}

LossContributions loss_contributions(const LossParts& parts, const LossWeights& w, int iteration,
                                     const LossSchedule& schedule) {
  const double gate = schedule.regularizers_active(iteration) ? 1.0 : 0.0;
  return {parts.color, gate * w.lambda_dn * parts.dn, gate * w.lambda_f * parts.flatten,
          0.5 * w.lambda_s * parts.scale};
}

double total_loss(const LossParts& parts, const LossWeights& w, int iteration,
                  const LossSchedule& schedule) {
  return loss_contributions(parts, w, iteration, schedule).total();
}

ViewLoss view_objective(const RenderOutput& rendered, const ViewTarget& target,
                        const LossWeights& weights, bool evaluate_dn, double dn_coef) {
  const Image& gt = *target.gt;
  const PixelWeightMask& wm = *target.wm;
  const int W = gt.width(), H = gt.height();
  ViewLoss out;
  out.grads = RenderGrads::zeros({W, H});

  // Normalized per-pixel loss weights omega = W * M / sum(W * M).
  const auto w = wm.weight->data();
  const auto m = wm.mask.data();
  std::vector<double> omega(gt.pixel_count());
  double den = 0.0;
  for (std::size_t i = 0; i < omega.size(); ++i) {
    omega[i] = w[i] * m[i];
    den += omega[i];
  }
  if (!(den > 0.0)) throw std::invalid_argument("view_objective: zero total weight");
  for (double& o : omega) o /= den;

  const double lam = weights.lambda_ssim;
  const auto r = rendered.color.data();
  const auto t = gt.data();
  auto gc = out.grads.color.data();
  double l1 = 0.0;
  for (std::size_t i = 0; i < omega.size(); ++i) {
    if (omega[i] == 0.0) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = r[i * 3 + c] - t[i * 3 + c];
      l1 += omega[i] * std::abs(d);
      gc[i * 3 + c] = (1.0 - lam) * omega[i] * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
  }
  out.color = (1.0 - lam) * l1;
  if (lam > 0.0) {
    const Image s = ssim_map(rendered.color, gt);
    const auto sd = s.data();
    Image up(W, H, 1);
    auto ud = up.data();
    for (std::size_t i = 0; i < omega.size(); ++i) {
      out.color += lam * omega[i] * (1.0 - sd[i]);
      ud[i] = -lam * omega[i];
    }
    const Image gs = ssim_backward(rendered.color, gt, up);
    const auto gsd = gs.data();
    for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += gsd[i];
  }

  if (evaluate_dn) {
    const NormalMap nd = depth_normal_map(rendered.depth, *target.stencil);
    const Image dne = dne_map(rendered.normal, nd, *target.grad_weight);
    const auto dd = dne.data();
    for (std::size_t i = 0; i < omega.size(); ++i) out.dn += omega[i] * dd[i];
    out.dn_evaluated = true;
    if (dn_coef != 0.0) {
      Image up(W, H, 1);
      auto ud = up.data();
      for (std::size_t i = 0; i < omega.size(); ++i) ud[i] = dn_coef * omega[i];
      dne_backward(rendered.normal, rendered.depth, nd, *target.grad_weight, *target.stencil, up,
                   out.grads.normal, out.grads.depth);
    }
  }
  return out;
}

ObjectiveResult evaluate_objective(const GaussianCloud& cloud, const CameraPose& pose,
                                   const Vec3& background, const ViewTarget& target,
                                   const LossWeights& weights, int iteration,
                                   const LossSchedule& schedule, bool compute_gradients,
                                   const RenderOptions& options) {
  const bool reg = schedule.regularizers_active(iteration);
  const SplatFrame frame = prepare_frame(cloud, pose);
  ObjectiveResult out;
  out.render = render(frame, background);
  const ViewLoss vl = view_objective(out.render, target, weights, reg, reg ? weights.lambda_dn : 0.0);
  const ScaleLosses sl = scale_losses(cloud);
  out.parts = {vl.color, vl.dn, sl.flatten, sl.scale};
  out.contributions = loss_contributions(out.parts, weights, iteration, schedule);
  if (compute_gradients) {
    out.grads = render_backward(frame, out.render, cloud, pose, background, vl.grads, options);
    scale_losses_backward(cloud, 0.5 * weights.lambda_s, reg ? weights.lambda_f : 0.0, out.grads.params);
  }
  return out;
}

}  // namespace erpgs
