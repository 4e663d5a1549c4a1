#include "erpgs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <spdlog/spdlog.h>

#include "erpgs/metrics.hpp"
#include "erpgs/rasterizer.hpp"
#include "json.hpp"

namespace erpgs {
namespace {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;
using BPoint = bg::model::point<double, 3, bg::cs::cartesian>;
using BValue = std::pair<BPoint, std::size_t>;

constexpr int kInitNeighbors = 3;
constexpr double kMinInitScale = 1e-4;

double group_lr(ParamGroup group, const TrainConfig& c, double position_lr) {
  switch (group) {
    case ParamGroup::kPosition: return position_lr;
    case ParamGroup::kScale: return c.lr.scale;
    case ParamGroup::kRotation: return c.lr.rotation;
    case ParamGroup::kOpacity: return c.lr.opacity;
    case ParamGroup::kColorDc: return c.lr.color_dc;
    case ParamGroup::kColorRest: return c.lr.color_dc / c.lr.color_rest_divisor;
  }
  return 0.0;
}

std::size_t used_params(ParamGroup group, int sh_degree, std::size_t span) {
  return group == ParamGroup::kColorRest ? 3 * static_cast<std::size_t>(sh_coeff_count(sh_degree) - 1) : span;
}

// Per-view loss inputs that stay fixed for the whole run.
struct ViewContext {
  const TrainSample* sample;
  PixelWeightMask wm;
  Image grad_weight;
};

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

double LearningRates::position_at(int iteration, int iterations) const {
  if (iterations <= 1) return position_init;
  const double t = std::clamp(static_cast<double>(iteration) / (iterations - 1), 0.0, 1.0);
  return std::exp(std::log(position_init) * (1.0 - t) + std::log(position_final) * t);
}

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.iterations = 7000;
  c.schedule.regularizer_start = 2000;
  c.densify_end = 3500;
  c.densify_grad_threshold = 2e-3;
  c.sh_degree = 0;
  return c;
}

TrainConfig TrainConfig::profile(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown config profile '" + name + "' (expected paper or desk)");
}

void TrainConfig::validate() const {
  weights.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (iterations < 0) fail("iterations must be >= 0");
  if (!(densify_start < densify_end)) fail("densify_start must be < densify_end");
  if (densify_interval <= 0 || opacity_reset_interval <= 0 || sh_interval <= 0) fail("intervals must be > 0");
  if (!(lr.position_init > 0 && lr.position_final > 0 && lr.scale > 0 && lr.rotation > 0 && lr.opacity > 0 &&
        lr.color_dc > 0 && lr.color_rest_divisor > 0)) {
    fail("learning rates must be > 0");
  }
  if (sh_degree < 0 || sh_degree > kMaxShDegree) fail("sh_degree must be in [0, 3]");
  if (!(init_opacity > 0 && init_opacity < 1)) fail("init_opacity must be in (0, 1)");
  if (split_count < 1 || !(split_scale_divisor > 0)) fail("invalid split settings");
}

// ---------------------------------------------------------------------------
// Log

void TrainLog::write_jsonl(std::ostream& out) const {
  for (const auto& r : records) {
    nlohmann::json j;
    j["iteration"] = r.iteration;
    j["view"] = r.view;
    j["loss"] = r.total;
    j["window_mean_loss"] = r.window_mean;
    j["parts"] = {{"color", r.parts.color}, {"dn", r.parts.dn}, {"flatten", r.parts.flatten},
                  {"scale", r.parts.scale}};
    j["contributions"] = {{"color", r.contributions.color}, {"dn", r.contributions.dn},
                          {"flatten", r.contributions.flatten}, {"scale", r.contributions.scale}};
    j["n_gaussians"] = r.n_gaussians;
    j["position_lr"] = r.position_lr;
    if (r.test_psnr) j["test_psnr"] = std::isinf(*r.test_psnr) ? nlohmann::json("inf") : nlohmann::json(*r.test_psnr);
    out << j.dump() << '\n';
  }
}

std::vector<double> TrainLog::window_means(int window) const {
  std::vector<double> out;
  for (std::size_t start = 0; start + window <= losses.size(); start += window) {
    out.push_back(std::accumulate(losses.begin() + start, losses.begin() + start + window, 0.0) / window);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialization and optimizer

GaussianCloud init_cloud(const PointCloud& points, const TrainConfig& config, double scene_extent) {
  if (points.size() == 0) throw std::invalid_argument("init_cloud: the point cloud is empty");
  std::vector<BValue> values;
  values.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points.xyz[i];
    values.emplace_back(BPoint(p.x(), p.y(), p.z()), i);
  }
  const bgi::rtree<BValue, bgi::quadratic<16>> tree(values.begin(), values.end());

  GaussianCloud cloud(config.sh_degree);
  const double max_scale = scene_extent / 10.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double scale = scene_extent / 100.0;
    if (points.size() > 1) {
      std::vector<BValue> nn;
      tree.query(bgi::nearest(values[i].first, kInitNeighbors) &&
                     bgi::satisfies([i](const BValue& v) { return v.second != i; }),
                 std::back_inserter(nn));
      double sum = 0.0;
      for (const auto& v : nn) sum += (points.xyz[v.second] - points.xyz[i]).norm();
      scale = std::clamp(sum / static_cast<double>(nn.size()), kMinInitScale, std::max(max_scale, kMinInitScale));
    }
    Gaussian3D g;
    g.mu = points.xyz[i];
    g.log_scale = Vec3::Constant(std::log(scale));
    g.logit_opacity = logit(config.init_opacity);
    for (int c = 0; c < 3; ++c) g.sh(0, c) = rgb_to_sh_dc(points.rgb[i][c]);
    cloud.push_back(g);
  }
  return cloud;
}

void adam_step(GaussianCloud& cloud, const std::vector<Gaussian3D>& grads, const TrainConfig& config,
               double position_lr, int step) {
  const AdamSettings& a = config.adam;
  const double bc1 = 1.0 - std::pow(a.beta1, step);
  const double bc2_sqrt = std::sqrt(1.0 - std::pow(a.beta2, step));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (ParamGroup group : kAllParamGroups) {
      const double lr = group_lr(group, config, position_lr);
      auto p = param_span(cloud[i], group);
      auto m = param_span(cloud.exp_avg()[i], group);
      auto v = param_span(cloud.exp_avg_sq()[i], group);
      const auto g = param_span(grads[i], group);
      const std::size_t n = used_params(group, cloud.max_sh_degree(), p.size());
      for (std::size_t k = 0; k < n; ++k) {
        m[k] = a.beta1 * m[k] + (1.0 - a.beta1) * g[k];
        v[k] = a.beta2 * v[k] + (1.0 - a.beta2) * g[k] * g[k];
        p[k] -= lr / bc1 * m[k] / (std::sqrt(v[k]) / bc2_sqrt + a.eps);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Adaptive density control

DensifyStats densify_and_prune(GaussianCloud& cloud, double scene_extent, int iteration,
                               const TrainConfig& config, std::uint64_t seed) {
  DensifyStats stats;
  const std::size_t n0 = cloud.size();
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(iteration + 1)));
  std::normal_distribution<double> N(0.0, 1.0);
  const double clone_limit = config.clone_scale_fraction * scene_extent;

  if (spdlog::should_log(spdlog::level::debug)) {
    std::vector<double> means;
    for (std::size_t i = 0; i < n0; ++i) {
      if (cloud.grad_count()[i] > 0) means.push_back(cloud.grad_accum()[i] / cloud.grad_count()[i]);
    }
    if (!means.empty()) {
      std::sort(means.begin(), means.end());
      auto q = [&](double f) { return means[static_cast<std::size_t>(f * (means.size() - 1))]; };
      spdlog::debug("iter {}: screen gradient quantiles 50% {:.2e}, 90% {:.2e}, 99% {:.2e}", iteration, q(0.5),
                    q(0.9), q(0.99));
    }
  }

  std::vector<Gaussian3D> added;
  std::vector<bool> keep(n0, true);
  for (std::size_t i = 0; i < n0; ++i) {
    const int count = cloud.grad_count()[i];
    if (count == 0) continue;
    const double grad = cloud.grad_accum()[i] / count;
    if (!(grad >= config.densify_grad_threshold)) continue;
    const Gaussian3D& g = cloud[i];
    const Vec3 s = g.scale();
    if (s.maxCoeff() <= clone_limit) {
      added.push_back(g);
      ++stats.cloned;
    } else {
      const Mat3 R = quat_to_rotation(g.unit_rot());
      for (int k = 0; k < config.split_count; ++k) {
        Gaussian3D child = g;
        child.mu = g.mu + R * Vec3(s.x() * N(rng), s.y() * N(rng), s.z() * N(rng));
        child.log_scale = (s / config.split_scale_divisor).array().log();
        added.push_back(child);
      }
      keep[i] = false;
      ++stats.split;
    }
  }
  for (const auto& g : added) cloud.push_back(g);
  keep.resize(cloud.size(), true);
  cloud.filter(keep);

  const bool size_rule = config.opacity_reset && iteration > config.opacity_reset_interval;
  const double big = config.large_scale_fraction * scene_extent;
  std::vector<bool> survive(cloud.size(), true);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Gaussian3D& g = cloud[i];
    if (g.opacity() < config.prune_opacity || (size_rule && g.scale().maxCoeff() > big)) {
      survive[i] = false;
      ++stats.pruned;
    }
  }
  // Never prune to an empty cloud.
  if (stats.pruned == static_cast<int>(cloud.size()) && !cloud.empty()) {
    survive[0] = true;
    --stats.pruned;
  }
  cloud.filter(survive);
  cloud.reset_densify_stats();
  return stats;
}

void reset_opacity(GaussianCloud& cloud, const TrainConfig& config) {
  const double cap = logit(config.opacity_reset_value);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    cloud[i].logit_opacity = std::min(cloud[i].logit_opacity, cap);
    cloud.exp_avg()[i].logit_opacity = 0.0;
    cloud.exp_avg_sq()[i].logit_opacity = 0.0;
  }
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  const std::vector<int> train_views = dataset.indices(Split::kTrain);
  const std::vector<int> test_views = dataset.indices(Split::kTest);
  if (train_views.size() < 2) throw std::invalid_argument("train: need at least 2 training views");

  std::vector<CameraPose> poses;
  for (int i : train_views) poses.push_back(dataset.samples[i].pose);
  TrainResult result;
  result.scene_extent = camera_extent(poses);
  const double extent = result.scene_extent;
  result.cloud = init_cloud(dataset.points, config, extent);
  GaussianCloud& cloud = result.cloud;

  const ErpImageGeom geom = dataset.manifest.geom();
  const TangentStencil stencil(geom, config.neighbor_vstep);
  auto ones = std::make_shared<const Image>(geom.width, geom.height, 1, 1.0);
  std::vector<ViewContext> contexts;
  for (int i : train_views) {
    const TrainSample& s = dataset.samples[i];
    ViewContext ctx{&s, s.wm, color_gradient_weight(s.image, stencil, config.dne_weight)};
    if (!config.use_mask) ctx.wm.mask = Image(geom.width, geom.height, 1, 1.0);
    if (!config.use_distortion_weight) ctx.wm.weight = ones;
    contexts.push_back(std::move(ctx));
  }

  std::mt19937_64 rng(config.seed);
  std::vector<int> order;
  std::size_t cursor = 0;
  const RenderOptions render_options{config.deterministic};
  double window_sum = 0.0;
  int window_count = 0;

  spdlog::info("training {} iterations on {} views, {} initial Gaussians, extent {:.3f}", config.iterations,
               contexts.size(), cloud.size(), extent);
  for (int it = 0; it < config.iterations; ++it) {
    const int done = it + 1;
    if (cursor == order.size()) {
      order.resize(contexts.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const ViewContext& ctx = contexts[order[cursor++]];
    cloud.set_active_sh_degree(it / config.sh_interval);
    const double position_lr = config.lr.position_at(it, config.iterations) * extent;

    const ViewTarget target{&ctx.sample->image, &ctx.wm, &ctx.grad_weight, &stencil};
    ObjectiveResult obj = evaluate_objective(cloud, ctx.sample->pose, config.background, target, config.weights,
                                             it, config.schedule, true, render_options);
    const double total = obj.contributions.total();
    if (!std::isfinite(total)) throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(it));
    result.log.losses.push_back(total);
    window_sum += total;
    ++window_count;

    if (done <= config.densify_end) accumulate_screen_gradients(cloud, obj.grads);
    adam_step(cloud, obj.grads.params, config, position_lr, done);

    if (done >= config.densify_start && done <= config.densify_end && done % config.densify_interval == 0) {
      const auto st = densify_and_prune(cloud, extent, done, config, config.seed);
      spdlog::debug("iter {}: cloned {}, split {}, pruned {} -> {}", done, st.cloned, st.split, st.pruned,
                    cloud.size());
    }
    if (config.opacity_reset && done <= config.densify_end && done % config.opacity_reset_interval == 0) {
      reset_opacity(cloud, config);
    }

    const bool log_now = config.log_interval > 0 && (done % config.log_interval == 0 || done == config.iterations);
    const bool eval_now = config.eval_interval > 0 && !test_views.empty() &&
                          (done % config.eval_interval == 0 || done == config.iterations);
    if (log_now || eval_now) {
      LossRecord rec;
      rec.iteration = done;
      rec.view = ctx.sample->name;
      rec.total = total;
      rec.parts = obj.parts;
      rec.contributions = obj.contributions;
      rec.window_mean = window_sum / window_count;
      rec.n_gaussians = cloud.size();
      rec.position_lr = position_lr;
      if (eval_now) rec.test_psnr = evaluate_views(cloud, dataset, test_views, {false, config.background}).mean_psnr();
      spdlog::info("iter {:>6}  loss {:.5f}  gaussians {}{}", done, rec.window_mean, rec.n_gaussians,
                   rec.test_psnr ? fmt::format("  test psnr {:.2f}", *rec.test_psnr) : std::string());
      result.log.records.push_back(rec);
      window_sum = 0.0;
      window_count = 0;
    }
    if (callbacks.after_iteration) callbacks.after_iteration(done, cloud);
  }
  return result;
}

}  // namespace erpgs
