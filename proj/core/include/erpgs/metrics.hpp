#pragma once

#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "erpgs/image.hpp"
#include "erpgs/scene_io.hpp"

namespace erpgs {

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) over pixels where mask > 0.5 (all pixels without a
/// mask). Identical inputs give kPsnrIdentical.
double psnr(const Image& a, const Image& b, const Image* mask = nullptr);

/// Mean of ssim_map over unmasked pixels.
double ssim_score(const Image& a, const Image& b, const Image* mask = nullptr);

struct EvalRow {
  std::string scene;
  std::string view;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr() const;
  double mean_ssim() const;
};

struct EvalOptions {
  bool invert_mask = false;  // score the obstacle region instead of the scene
  Vec3 background = Vec3::Zero();
};

/// Renders each listed view, rounds it to the ground truth's stored bit
/// depth (as if written to the same PNG format) and scores it.
EvalReport evaluate_views(const GaussianCloud& cloud, const Dataset& dataset, const std::vector<int>& views,
                          const EvalOptions& options = {});

/// Tab-separated: scene, view, psnr, ssim, lpips (left blank), then a mean row.
void write_eval_report(std::ostream& out, const EvalReport& report);

}  // namespace erpgs
