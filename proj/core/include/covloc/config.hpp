#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "covloc/bench.hpp"

namespace covloc {

/// Everything one JSON config describes. `experiment.base_scenario`,
/// `experiment.solver` and `experiment.on_grid` hold the scenario, solver and
/// on_grid sections; the experiment section only adds sweep settings.
struct RunConfig {
  ExperimentSpec experiment;
  std::uint64_t scenario_seed = 0;
  bool has_experiment = false;
};

/// Throws ConfigError whose where() is a JSON pointer to the offending field.
RunConfig parse_config(const nlohmann::json& doc);

/// Reads and parses a file. Syntax errors carry "line N, column M".
RunConfig load_config(const std::filesystem::path& path);

}  // namespace covloc
