#include "config_file.hpp"

#include <fstream>
#include <stdexcept>

#include "erpgs/error.hpp"
#include "json.hpp"

namespace erpgs::cli {
namespace {

using nlohmann::json;

template <typename T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw LoadError(where, key, e.what());
  }
}

json to_json(const TrainConfig& c) {
  return {
      {"iterations", c.iterations},
      {"lambda_ssim", c.weights.lambda_ssim},
      {"lambda_dn", c.weights.lambda_dn},
      {"lambda_f", c.weights.lambda_f},
      {"lambda_s", c.weights.lambda_s},
      {"regularizer_start", c.schedule.regularizer_start},
      {"position_lr_init", c.lr.position_init},
      {"position_lr_final", c.lr.position_final},
      {"scale_lr", c.lr.scale},
      {"rotation_lr", c.lr.rotation},
      {"opacity_lr", c.lr.opacity},
      {"color_lr", c.lr.color_dc},
      {"densify_start", c.densify_start},
      {"densify_end", c.densify_end},
      {"densify_interval", c.densify_interval},
      {"densify_grad_threshold", c.densify_grad_threshold},
      {"prune_opacity", c.prune_opacity},
      {"large_scale_fraction", c.large_scale_fraction},
      {"opacity_reset", c.opacity_reset},
      {"opacity_reset_interval", c.opacity_reset_interval},
      {"sh_degree", c.sh_degree},
      {"use_mask", c.use_mask},
      {"use_distortion_weight", c.use_distortion_weight},
      {"dne_weight", c.dne_weight == DneWeightMode::kEdgeAware ? "edge-aware" : "literal"},
      {"neighbor_vstep", c.neighbor_vstep == NeighborVStep::kDoublePitch ? "paper" : "pitch"},
      {"seed", c.seed},
      {"deterministic", c.deterministic},
      {"log_interval", c.log_interval},
      {"eval_interval", c.eval_interval},
  };
}

}  // namespace

TrainConfig load_config(const std::string& profile_or_path) {
  if (profile_or_path == "paper" || profile_or_path == "desk") return TrainConfig::profile(profile_or_path);
  const std::filesystem::path path(profile_or_path);
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), "", "not a profile name (paper, desk) and cannot open as a config file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(path.string(), "", std::string("invalid JSON: ") + e.what());
  }
  const std::string where = path.string();
  if (!j.is_object()) throw LoadError(where, "", "expected a JSON object");
  const json known = to_json(TrainConfig{});
  for (const auto& [key, value] : j.items()) {
    if (key != "profile" && !known.contains(key)) throw LoadError(where, key, "unknown config key");
  }

  std::string base = "paper";
  take(j, "profile", base, where);
  TrainConfig c = TrainConfig::profile(base);
  take(j, "iterations", c.iterations, where);
  take(j, "lambda_ssim", c.weights.lambda_ssim, where);
  take(j, "lambda_dn", c.weights.lambda_dn, where);
  take(j, "lambda_f", c.weights.lambda_f, where);
  take(j, "lambda_s", c.weights.lambda_s, where);
  take(j, "regularizer_start", c.schedule.regularizer_start, where);
  take(j, "position_lr_init", c.lr.position_init, where);
  take(j, "position_lr_final", c.lr.position_final, where);
  take(j, "scale_lr", c.lr.scale, where);
  take(j, "rotation_lr", c.lr.rotation, where);
  take(j, "opacity_lr", c.lr.opacity, where);
  take(j, "color_lr", c.lr.color_dc, where);
  take(j, "densify_start", c.densify_start, where);
  take(j, "densify_end", c.densify_end, where);
  take(j, "densify_interval", c.densify_interval, where);
  take(j, "densify_grad_threshold", c.densify_grad_threshold, where);
  take(j, "prune_opacity", c.prune_opacity, where);
  take(j, "large_scale_fraction", c.large_scale_fraction, where);
  take(j, "opacity_reset", c.opacity_reset, where);
  take(j, "opacity_reset_interval", c.opacity_reset_interval, where);
  take(j, "sh_degree", c.sh_degree, where);
  take(j, "use_mask", c.use_mask, where);
  take(j, "use_distortion_weight", c.use_distortion_weight, where);
  take(j, "seed", c.seed, where);
  take(j, "deterministic", c.deterministic, where);
  take(j, "log_interval", c.log_interval, where);
  take(j, "eval_interval", c.eval_interval, where);
  std::string mode;
  take(j, "dne_weight", mode, where);
  if (mode == "edge-aware") c.dne_weight = DneWeightMode::kEdgeAware;
  else if (mode == "literal") c.dne_weight = DneWeightMode::kLiteral;
  else if (!mode.empty()) throw LoadError(where, "dne_weight", "expected edge-aware or literal");
  std::string vstep;
  take(j, "neighbor_vstep", vstep, where);
  if (vstep == "paper") c.neighbor_vstep = NeighborVStep::kDoublePitch;
  else if (vstep == "pitch") c.neighbor_vstep = NeighborVStep::kPitch;
  else if (!vstep.empty()) throw LoadError(where, "neighbor_vstep", "expected paper or pitch");
  return c;
}

std::string dump_config(const TrainConfig& config) { return to_json(config).dump(2); }

}  // namespace erpgs::cli
