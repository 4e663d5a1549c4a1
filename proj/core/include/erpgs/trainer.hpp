#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "erpgs/gaussian.hpp"
#include "erpgs/geometry_reg.hpp"
#include "erpgs/losses.hpp"
#include "erpgs/scene_io.hpp"

namespace erpgs {

struct LearningRates {
  double position_init = 1.6e-4;  // multiplied by the scene extent
  double position_final = 1.6e-6;
  double scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double color_dc = 2.5e-3;
  double color_rest_divisor = 20.0;

  /// Log-linear decay from position_init to position_final over `iterations`.
  double position_at(int iteration, int iterations) const;
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

struct TrainConfig {
  int iterations = 30000;
  LossWeights weights;
  LossSchedule schedule;  // regularizer_start = 10000
  LearningRates lr;
  AdamSettings adam;

  int densify_start = 500;
  int densify_end = 15000;
  int densify_interval = 100;
  double densify_grad_threshold = 2e-4;
  double clone_scale_fraction = 0.01;  // clone below this fraction of the extent, split above
  double split_scale_divisor = 1.6;
  int split_count = 2;
  double prune_opacity = 0.005;
  double large_scale_fraction = 0.1;  // prune when max scale exceeds this fraction of the extent

  bool opacity_reset = true;
  int opacity_reset_interval = 3000;
  double opacity_reset_value = 0.01;

  int sh_degree = 3;
  int sh_interval = 1000;

  double init_opacity = 0.1;

  bool use_mask = true;
  bool use_distortion_weight = true;
  DneWeightMode dne_weight = DneWeightMode::kEdgeAware;
  NeighborVStep neighbor_vstep = NeighborVStep::kDoublePitch;

  std::uint64_t seed = 0;
  bool deterministic = true;
  Vec3 background = Vec3::Zero();

  int log_interval = 100;
  int eval_interval = 0;  // held-out PSNR every N iterations, 0 disables

  static TrainConfig paper();
  static TrainConfig desk();
  /// "paper" or "desk"; throws std::invalid_argument otherwise.
  static TrainConfig profile(const std::string& name);

  void validate() const;
};

struct LossRecord {
  int iteration = 0;  // iterations completed
  std::string view;
  double total = 0.0;
  LossParts parts;
  LossContributions contributions;
  double window_mean = 0.0;  // mean total since the previous record
  std::size_t n_gaussians = 0;
  double position_lr = 0.0;
  std::optional<double> test_psnr;
};

struct TrainLog {
  std::vector<LossRecord> records;
  std::vector<double> losses;  // total loss of every iteration

  void write_jsonl(std::ostream& out) const;
  /// Means of `losses` over consecutive windows of `window` iterations.
  std::vector<double> window_means(int window) const;
};

/// One Gaussian per point: SH DC from the point color, opacity
/// config.init_opacity, identity rotation, isotropic scale equal to the mean
/// distance to the 3 nearest neighbors clamped to [1e-4, extent / 10]. A
/// single point gets extent / 100.
GaussianCloud init_cloud(const PointCloud& points, const TrainConfig& config, double scene_extent);

/// Adam update of every parameter with per-group learning rates; `step` is
/// the 1-based iteration used for bias correction.
void adam_step(GaussianCloud& cloud, const std::vector<Gaussian3D>& grads, const TrainConfig& config,
               double position_lr, int step);

struct DensifyStats {
  int cloned = 0;
  int split = 0;
  int pruned = 0;
};

/// Clone/split by accumulated screen gradient, then prune transparent and
/// oversized Gaussians (the size rule applies once `iteration` is past the
/// first opacity reset). Resets the gradient statistics.
DensifyStats densify_and_prune(GaussianCloud& cloud, double scene_extent, int iteration,
                               const TrainConfig& config, std::uint64_t seed);

/// Caps every opacity at config.opacity_reset_value and clears its moments.
void reset_opacity(GaussianCloud& cloud, const TrainConfig& config);

struct TrainCallbacks {
  /// Called after each iteration with the number of completed iterations.
  std::function<void(int, const GaussianCloud&)> after_iteration;
};

struct TrainResult {
  GaussianCloud cloud;
  TrainLog log;
  double scene_extent = 0.0;
};

TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainCallbacks& callbacks = {});

}  // namespace erpgs
