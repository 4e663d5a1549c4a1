#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>
#include <tbb/global_control.h>

#include "config_file.hpp"
#include "erpgs/error.hpp"
#include "erpgs/image_io.hpp"
#include "erpgs/metrics.hpp"
#include "erpgs/rasterizer.hpp"
#include "erpgs/scene_io.hpp"
#include "erpgs/trainer.hpp"

namespace fs = std::filesystem;
using namespace erpgs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;
const std::vector<int> kCheckpointIterations{7000, 30000};

// Thrown for argument combinations CLI11 cannot check on its own.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::optional<int> parse_index(const std::string& s) {
  int v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) return std::nullopt;
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  SynthSpec spec;
  std::string path = "spiral";
};

int run_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec;
  spec.path = a.path == "ring" ? CameraPath::kRing : CameraPath::kSpiral;
  const SynthResult r = synth_scene(spec, a.out);
  std::cout << r.manifest.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path scene;
  fs::path out;
  std::string config = "paper";
  int iterations = 0;
  std::uint64_t seed = 0;
  bool deterministic = false;
  LossWeights weights;
  int regularizer_start = 0;
  int sh_degree = 0;
  bool no_mask = false;
  bool no_distortion_weight = false;
  bool no_opacity_reset = false;
  int eval_interval = 0;
  int log_interval = 0;
  std::vector<int> save_at;
};

struct TrainOptions {
  CLI::Option* iterations;
  CLI::Option* seed;
  CLI::Option* lambda_ssim;
  CLI::Option* lambda_dn;
  CLI::Option* lambda_f;
  CLI::Option* lambda_s;
  CLI::Option* regularizer_start;
  CLI::Option* sh_degree;
  CLI::Option* eval_interval;
  CLI::Option* log_interval;
};

int run_train(const TrainArgs& a, const TrainOptions& o) {
  TrainConfig config = cli::load_config(a.config);
  if (o.iterations->count()) config.iterations = a.iterations;
  if (o.seed->count()) config.seed = a.seed;
  if (a.deterministic) config.deterministic = true;
  if (o.lambda_ssim->count()) config.weights.lambda_ssim = a.weights.lambda_ssim;
  if (o.lambda_dn->count()) config.weights.lambda_dn = a.weights.lambda_dn;
  if (o.lambda_f->count()) config.weights.lambda_f = a.weights.lambda_f;
  if (o.lambda_s->count()) config.weights.lambda_s = a.weights.lambda_s;
  if (o.regularizer_start->count()) config.schedule.regularizer_start = a.regularizer_start;
  if (o.sh_degree->count()) config.sh_degree = a.sh_degree;
  if (o.eval_interval->count()) config.eval_interval = a.eval_interval;
  if (o.log_interval->count()) config.log_interval = a.log_interval;
  if (a.no_mask) config.use_mask = false;
  if (a.no_distortion_weight) config.use_distortion_weight = false;
  if (a.no_opacity_reset) config.opacity_reset = false;
  config.validate();

  const Dataset dataset = load_scene(a.scene);
  fs::create_directories(a.out);
  {
    std::ofstream cfg(a.out / "config.json");
    cfg << cli::dump_config(config) << '\n';
  }

  std::set<int> save_at(a.save_at.begin(), a.save_at.end());
  for (int it : kCheckpointIterations) save_at.insert(it);
  TrainCallbacks callbacks;
  callbacks.after_iteration = [&](int done, const GaussianCloud& cloud) {
    if (save_at.count(done)) {
      const fs::path p = a.out / ("checkpoint_" + std::to_string(done) + ".ply");
      save_checkpoint(cloud, p);
      spdlog::info("wrote {}", p.string());
    }
  };
  const TrainResult result = train(dataset, config, callbacks);
  save_checkpoint(result.cloud, a.out / "final.ply");
  std::ofstream log(a.out / "train_log.jsonl");
  result.log.write_jsonl(log);
  spdlog::info("wrote {} ({} Gaussians)", (a.out / "final.ply").string(), result.cloud.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  fs::path checkpoint;
  std::string pose;
  fs::path scene;
  fs::path out;
  bool maps = false;
  int bit_depth = 16;
};

CameraPose resolve_pose(const std::string& pose, const fs::path& scene) {
  if (const auto index = parse_index(pose)) {
    if (scene.empty()) throw UsageError("--pose given as a view index requires --scene");
    const SceneManifest m = read_manifest(scene);
    if (*index < 0 || *index >= static_cast<int>(m.views.size())) {
      throw UsageError("view index " + pose + " out of range (" + std::to_string(m.views.size()) + " views)");
    }
    const ManifestView& v = m.views[*index];
    return make_pose(v.q, v.t, m.geom(), scene.string() + " view " + v.name);
  }
  return read_pose_file(pose);
}

int run_render(const RenderArgs& a) {
  const GaussianCloud cloud = load_checkpoint(a.checkpoint);
  const CameraPose pose = resolve_pose(a.pose, a.scene);
  const RenderOutput r = render(cloud, pose, Vec3::Zero());
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_png(a.out, r.color, a.bit_depth);
  if (a.maps) {
    const fs::path stem = a.out.parent_path() / a.out.stem();
    Image normal(r.normal.width(), r.normal.height(), 3);
    for (std::size_t i = 0; i < normal.data().size(); ++i) normal.data()[i] = 0.5 * (r.normal.data()[i] + 1.0);
    write_png(stem.string() + "_normal.png", normal, a.bit_depth);

    double max_depth = 0.0;
    for (double d : r.depth.data()) max_depth = std::max(max_depth, d);
    Image depth(r.depth.width(), r.depth.height(), 1);
    if (max_depth > 0.0) {
      for (std::size_t i = 0; i < depth.data().size(); ++i) depth.data()[i] = r.depth.data()[i] / max_depth;
    }
    write_png(stem.string() + "_depth.png", depth, a.bit_depth, {{"depth_scale", std::to_string(max_depth)}});
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path checkpoint;
  fs::path scene;
  std::string views;
  fs::path out;
  bool invert_mask = false;
};

std::vector<int> resolve_views(const Dataset& ds, const std::string& list) {
  if (list.empty()) {
    auto v = ds.indices(Split::kTest);
    if (v.empty()) throw UsageError("the scene has no held-out views; pass --views");
    return v;
  }
  if (list == "all") {
    std::vector<int> v(ds.samples.size());
    std::iota(v.begin(), v.end(), 0);
    return v;
  }
  std::vector<int> out;
  for (const std::string& item : split_list(list)) {
    const auto it = std::find_if(ds.samples.begin(), ds.samples.end(), [&](const auto& s) { return s.name == item; });
    if (it != ds.samples.end()) {
      out.push_back(static_cast<int>(it - ds.samples.begin()));
    } else if (const auto index = parse_index(item); index && *index >= 0 && *index < static_cast<int>(ds.samples.size())) {
      out.push_back(*index);
    } else {
      throw UsageError("unknown view '" + item + "'");
    }
  }
  return out;
}

int run_eval(const EvalArgs& a) {
  const GaussianCloud cloud = load_checkpoint(a.checkpoint);
  const Dataset dataset = load_scene(a.scene);
  const std::vector<int> views = resolve_views(dataset, a.views);
  const EvalReport report = evaluate_views(cloud, dataset, views, {a.invert_mask, Vec3::Zero()});
  if (a.out.empty()) {
    write_eval_report(std::cout, report);
  } else {
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("cannot write " + a.out.string());
    write_eval_report(out, report);
  }
  spdlog::info("{} views: mean PSNR {:.3f} dB, mean SSIM {:.4f}", views.size(), report.mean_psnr(),
               report.mean_ssim());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Omnidirectional Gaussian splatting on equirectangular images"};
  app.require_subcommand(1);
  int threads = 0;
  std::string log_level = "info";
  app.add_option("--threads", threads, "Worker thread cap (0: all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic ERP dataset with a hidden ground-truth cloud");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.spec.seed, "Random seed")->capture_default_str();
  s->add_option("--gaussians", synth.spec.n_gaussians, "Ground-truth Gaussians")
      ->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--views", synth.spec.n_views, "Number of views (>= 2)")
      ->check(CLI::Range(2, 100000))->capture_default_str();
  s->add_option("--width", synth.spec.width, "Image width")->capture_default_str();
  s->add_option("--height", synth.spec.height, "Image height")->capture_default_str();
  s->add_option("--path", synth.path, "Camera path")->check(CLI::IsMember({"spiral", "ring"}))->capture_default_str();
  s->add_flag("--with-mask", synth.spec.with_mask, "Stamp a camera stand and write masks");
  s->add_option("--test-every", synth.spec.test_every, "Hold out every n-th view (0: none)")->capture_default_str();
  s->add_option("--camera-radius", synth.spec.camera_radius, "Outer radius of the camera path")->capture_default_str();
  s->add_option("--shell-inner", synth.spec.shell_inner, "Inner radius of the Gaussian shell")->capture_default_str();
  s->add_option("--shell-thickness", synth.spec.shell_thickness, "Thickness of the Gaussian shell")
      ->capture_default_str();
  s->add_option("--scale-min", synth.spec.scale_min, "Smallest major-axis scale")->capture_default_str();
  s->add_option("--scale-max", synth.spec.scale_max, "Largest major-axis scale")->capture_default_str();
  s->add_option("--surface-aligned", synth.spec.surface_aligned, "Orient Gaussians tangent to the shell")
      ->capture_default_str();
  s->add_option("--patch-size", synth.spec.patch_size, "Gaussians per flat patch")->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--patch-radius", synth.spec.patch_radius, "Patch radius")->capture_default_str();
  s->add_option("--color-jitter", synth.spec.color_jitter, "Per-Gaussian color deviation within a patch")->capture_default_str();

  TrainArgs train_args;
  TrainOptions topt{};
  auto* t = app.add_subcommand("train", "Optimize a Gaussian cloud on a scene");
  t->add_option("--scene", train_args.scene, "scene.json manifest")->required();
  t->add_option("--out", train_args.out, "Output directory")->required();
  t->add_option("--config", train_args.config, "Profile (paper, desk) or JSON config file")->capture_default_str();
  topt.iterations = t->add_option("--iterations", train_args.iterations, "Iterations")->check(CLI::NonNegativeNumber);
  topt.seed = t->add_option("--seed", train_args.seed, "Random seed");
  t->add_flag("--deterministic", train_args.deterministic, "Fixed-order gradient reduction");
  topt.lambda_ssim = t->add_option("--lambda-ssim", train_args.weights.lambda_ssim, "D-SSIM weight");
  topt.lambda_dn = t->add_option("--lambda-dn", train_args.weights.lambda_dn, "Depth-normal weight");
  topt.lambda_f = t->add_option("--lambda-f", train_args.weights.lambda_f, "Flatten weight");
  topt.lambda_s = t->add_option("--lambda-s", train_args.weights.lambda_s, "Scale weight");
  topt.regularizer_start =
      t->add_option("--regularizer-start", train_args.regularizer_start, "Iteration enabling L_dn and L_f");
  topt.sh_degree = t->add_option("--sh-degree", train_args.sh_degree, "Maximum SH degree")->check(CLI::Range(0, 3));
  topt.eval_interval = t->add_option("--eval-interval", train_args.eval_interval, "Held-out PSNR interval");
  topt.log_interval = t->add_option("--log-interval", train_args.log_interval, "Log record interval");
  t->add_flag("--no-mask", train_args.no_mask, "Ignore the view masks");
  t->add_flag("--no-distortion-weight", train_args.no_distortion_weight, "Uniform pixel weights");
  t->add_flag("--no-opacity-reset", train_args.no_opacity_reset, "Disable periodic opacity resets");
  t->add_option("--save-at", train_args.save_at, "Extra checkpoint iterations")->delimiter(',');

  RenderArgs render_args;
  auto* r = app.add_subcommand("render", "Render a checkpoint to PNG");
  r->add_option("--checkpoint", render_args.checkpoint, "Checkpoint PLY")->required();
  r->add_option("--pose", render_args.pose, "View index into --scene, or a pose JSON file")->required();
  r->add_option("--scene", render_args.scene, "scene.json for view-index poses");
  r->add_option("--out", render_args.out, "Output PNG")->required();
  r->add_flag("--maps", render_args.maps, "Also write <stem>_normal.png and <stem>_depth.png");
  r->add_option("--bit-depth", render_args.bit_depth, "PNG bit depth")->check(CLI::IsMember({8, 16}))
      ->capture_default_str();

  EvalArgs eval_args;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on scene views");
  e->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint PLY")->required();
  e->add_option("--scene", eval_args.scene, "scene.json manifest")->required();
  e->add_option("--views", eval_args.views, "Comma list of names or indices, or 'all' (default: test split)");
  e->add_option("--out", eval_args.out, "Report path (default: stdout)");
  e->add_flag("--invert-mask", eval_args.invert_mask, "Score the masked-out region instead");

  ColmapImport colmap;
  auto* c = app.add_subcommand("convert-colmap", "Convert COLMAP text output to scene.json");
  c->add_option("--images", colmap.images_txt, "images.txt")->required()->check(CLI::ExistingFile);
  c->add_option("--points", colmap.points3d_txt, "points3D.txt")->required()->check(CLI::ExistingFile);
  c->add_option("--image-dir", colmap.image_dir, "Image directory as referenced by the manifest")->required();
  c->add_option("--out", colmap.out_dir, "Output directory")->required();
  c->add_option("--scene-name", colmap.scene, "Scene name")->capture_default_str();
  c->add_option("--width", colmap.width, "Image width (0: detect)");
  c->add_option("--height", colmap.height, "Image height (0: detect)");
  c->add_option("--test-every", colmap.test_every, "Hold out every n-th view (0: none)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kExitOk : kExitUsage;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  std::optional<tbb::global_control> thread_cap;
  if (threads > 0) thread_cap.emplace(tbb::global_control::max_allowed_parallelism, threads);

  try {
    if (s->parsed()) return run_synth(synth);
    if (t->parsed()) return run_train(train_args, topt);
    if (r->parsed()) return run_render(render_args);
    if (e->parsed()) return run_eval(eval_args);
    if (c->parsed()) {
      std::cout << convert_colmap(colmap).string() << '\n';
      return kExitOk;
    }
  } catch (const LoadError& err) {
    spdlog::error("{}", err.what());
    return kExitUsage;
  } catch (const std::invalid_argument& err) {
    spdlog::error("{}", err.what());
    return kExitUsage;
  } catch (const std::exception& err) {
    spdlog::error("{}", err.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
