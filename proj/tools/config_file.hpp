#pragma once

#include <filesystem>
#include <string>

#include "erpgs/trainer.hpp"

namespace erpgs::cli {

/// A profile name ("paper", "desk") or a JSON file. A file may name a base
/// profile under "profile" and overrides any TrainConfig field by its name.
TrainConfig load_config(const std::string& profile_or_path);

/// The effective configuration as JSON (the same keys load_config accepts).
std::string dump_config(const TrainConfig& config);

}  // namespace erpgs::cli
