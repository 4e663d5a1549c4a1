#pragma once

#include <memory>

#include "erpgs/gaussian.hpp"
#include "erpgs/geometry_reg.hpp"
#include "erpgs/image.hpp"
#include "erpgs/rasterizer.hpp"

namespace erpgs {

struct LossWeights {
  double lambda_ssim = 0.2;
  double lambda_dn = 0.01;
  double lambda_f = 100.0;
  double lambda_s = 0.01;

  void validate() const;
};

/// Iteration from which the depth-normal and flatten terms switch on. The
/// scale term is always on.
struct LossSchedule {
  int regularizer_start = 10000;
  bool regularizers_active(int iteration) const { return iteration >= regularizer_start; }
};

/// Solid-angle weights and the obstacle mask of one view. Both H×W.
struct PixelWeightMask {
  std::shared_ptr<const Image> weight;
  Image mask;

  /// Throws std::invalid_argument when sum(weight * mask) is not positive.
  void validate() const;
};

/// Solid-angle weight of every pixel.
Image distortion_weight_map(const ErpImageGeom& g);

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Per-pixel SSIM averaged over channels; Gaussian window wraps horizontally
/// and reflects vertically.
Image ssim_map(const Image& a, const Image& b);

/// Gradient with respect to `a` of sum_p upstream(p) * ssim_map(a, b)(p).
Image ssim_backward(const Image& a, const Image& b, const Image& upstream);

/// (1 - lambda) * L1 over channels + lambda * (1 - SSIM), per pixel.
Image cre_map(const Image& rendered, const Image& gt, double lambda_ssim);

/// sum(W * M * err) / sum(W * M).
double weighted_masked_mean(const Image& err, const PixelWeightMask& wm);

struct ScaleLosses {
  double scale = 0.0;    // mean |s|^2
  double flatten = 0.0;  // mean min(s)
};

ScaleLosses scale_losses(const GaussianCloud& cloud);
/// Adds d(coef_s * L_s + coef_f * L_f) / d log_scale into grads.
void scale_losses_backward(const GaussianCloud& cloud, double coef_scale, double coef_flatten,
                           std::vector<Gaussian3D>& grads);

struct LossParts {
  double color = 0.0;
  double dn = 0.0;
  double flatten = 0.0;
  double scale = 0.0;
};

/// Each term as it enters the objective (weights and gates applied).
struct LossContributions {
  double color = 0.0;
  double dn = 0.0;
  double flatten = 0.0;
  double scale = 0.0;
  double total() const { return color + dn + flatten + scale; }
};

LossContributions loss_contributions(const LossParts& parts, const LossWeights& w, int iteration,
                                     const LossSchedule& schedule);
double total_loss(const LossParts& parts, const LossWeights& w, int iteration,
                  const LossSchedule& schedule);

/// Ground truth and weighting for one image-space objective evaluation.
struct ViewTarget {
  const Image* gt = nullptr;           // H×W×3
  const PixelWeightMask* wm = nullptr;
  const Image* grad_weight = nullptr;  // H×W, from color_gradient_weight
  const TangentStencil* stencil = nullptr;
};

struct ViewLoss {
  double color = 0.0;
  double dn = 0.0;  // raw value, 0 when not evaluated
  bool dn_evaluated = false;
  RenderGrads grads;
};

/// L_color and (optionally) L_dn for one rendered view together with
/// d(L_color + dn_coef * L_dn)/d(rendered maps). With evaluate_dn false the
/// depth-normal term is skipped entirely.
ViewLoss view_objective(const RenderOutput& rendered, const ViewTarget& target,
                        const LossWeights& weights, bool evaluate_dn, double dn_coef);

struct ObjectiveResult {
  LossParts parts;
  LossContributions contributions;
  RenderOutput render;
  CloudGradients grads;  // empty unless gradients were requested
};

/// Renders one view, evaluates the total loss at `iteration` and, if asked,
/// backpropagates all active terms to the raw Gaussian parameters.
ObjectiveResult evaluate_objective(const GaussianCloud& cloud, const CameraPose& pose,
                                   const Vec3& background, const ViewTarget& target,
                                   const LossWeights& weights, int iteration,
                                   const LossSchedule& schedule, bool compute_gradients,
                                   const RenderOptions& options = {});

}  // namespace erpgs
