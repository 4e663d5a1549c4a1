#include <cmath>
#include <memory>
#include <random>

#include <Eigen/Geometry>
#include <benchmark/benchmark.h>

#include "erpgs/erp_camera.hpp"
#include "erpgs/geometry_reg.hpp"
#include "erpgs/losses.hpp"
#include "erpgs/rasterizer.hpp"
#include "erpgs/trainer.hpp"

namespace erpgs {
namespace {

GaussianCloud shell_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  GaussianCloud cloud(0);
  for (int i = 0; i < n; ++i) {
    Gaussian3D g;
    const Vec3 dir = Vec3(N(rng), N(rng), N(rng)).normalized();
    g.mu = (2.0 + 2.0 * U(rng)) * dir;
    g.log_scale = Vec3(std::log(0.05 + 0.1 * U(rng)), std::log(0.05 + 0.1 * U(rng)), std::log(0.01));
    g.rot = Vec4(N(rng), N(rng), N(rng), N(rng)).normalized();
    g.logit_opacity = logit(0.5 + 0.45 * U(rng));
    for (int c = 0; c < 3; ++c) g.sh(0, c) = N(rng);
    cloud.push_back(g);
  }
  return cloud;
}

const ErpImageGeom kGeom{256, 128};

CameraPose bench_pose() {
  const Mat3 R = Eigen::AngleAxisd(0.4, Vec3::UnitY()).toRotationMatrix();
  return CameraPose::look_from(Vec3(0.2, 0.0, -0.3), R, kGeom);
}

void BM_ProjectToPixel(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<Vec3> dirs(1024);
  for (auto& d : dirs) d = Vec3(N(rng), N(rng), N(rng));
  for (auto _ : state) {
    for (const auto& d : dirs) benchmark::DoNotOptimize(project_to_pixel(d, kGeom));
  }
  state.SetItemsProcessed(state.iterations() * dirs.size());
}
BENCHMARK(BM_ProjectToPixel);

void BM_Render(benchmark::State& state) {
  const GaussianCloud cloud = shell_cloud(static_cast<int>(state.range(0)), 2);
  const CameraPose pose = bench_pose();
  for (auto _ : state) benchmark::DoNotOptimize(render(cloud, pose, Vec3::Zero()));
}
BENCHMARK(BM_Render)->Arg(300)->Arg(3000)->Unit(benchmark::kMillisecond);

void BM_RenderBackward(benchmark::State& state) {
  const GaussianCloud cloud = shell_cloud(static_cast<int>(state.range(0)), 3);
  const CameraPose pose = bench_pose();
  const SplatFrame frame = prepare_frame(cloud, pose);
  const RenderOutput fwd = render(frame, Vec3::Zero());
  RenderGrads up = RenderGrads::zeros(kGeom);
  for (double& x : up.color.data()) x = 1e-3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(render_backward(frame, fwd, cloud, pose, Vec3::Zero(), up));
  }
}
BENCHMARK(BM_RenderBackward)->Arg(300)->Arg(3000)->Unit(benchmark::kMillisecond);

void BM_SsimMap(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Image a(kGeom.width, kGeom.height, 3), b(kGeom.width, kGeom.height, 3);
  for (double& x : a.data()) x = U(rng);
  for (double& x : b.data()) x = U(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssim_map(a, b));
}
BENCHMARK(BM_SsimMap)->Unit(benchmark::kMillisecond);

void BM_ObjectiveStep(benchmark::State& state) {
  const GaussianCloud cloud = shell_cloud(static_cast<int>(state.range(0)), 5);
  const GaussianCloud target_cloud = shell_cloud(300, 6);
  const CameraPose pose = bench_pose();
  const Image gt = render(target_cloud, pose, Vec3::Zero()).color;
  PixelWeightMask wm{std::make_shared<Image>(distortion_weight_map(kGeom)), Image(kGeom.width, kGeom.height, 1, 1.0)};
  const TangentStencil stencil(kGeom);
  const Image grad_weight = color_gradient_weight(gt, stencil);
  const ViewTarget target{&gt, &wm, &grad_weight, &stencil};
  const LossSchedule schedule{0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        evaluate_objective(cloud, pose, Vec3::Zero(), target, LossWeights{}, 1, schedule, true));
  }
}
BENCHMARK(BM_ObjectiveStep)->Arg(300)->Arg(3000)->Unit(benchmark::kMillisecond);

void BM_DensifyAndPrune(benchmark::State& state) {
  const GaussianCloud base = shell_cloud(static_cast<int>(state.range(0)), 7);
  TrainConfig cfg = TrainConfig::desk();
  for (auto _ : state) {
    state.PauseTiming();
    GaussianCloud c = base;
    for (std::size_t i = 0; i < c.size(); i += 3) {
      c.grad_accum()[i] = 1.0;
      c.grad_count()[i] = 1;
    }
    state.ResumeTiming();
    benchmark::DoNotOptimize(densify_and_prune(c, 1.0, 600, cfg, 1));
  }
}
BENCHMARK(BM_DensifyAndPrune)->Arg(3000)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace erpgs

BENCHMARK_MAIN();
