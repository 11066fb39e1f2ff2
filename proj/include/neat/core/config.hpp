#pragma once

#include <filesystem>
#include <string>

#include "neat/core/calibration.hpp"
#include "neat/core/controller.hpp"
#include "neat/core/engine.hpp"

namespace neat {

/// Everything a config file can set. Defaults mirror config/neat_defaults.json.
struct PipelineConfig {
  std::size_t calibration_set_size = 20;
  CalibrationConfig calibration;
  ControllerConfig controller;
  GenerationConfig generation;
};

/// Defaults with the toy vocabulary's reflection ids for `vocab`.
PipelineConfig default_config(std::uint32_t vocab = 40);

/// JSON config; keys absent from the file keep their defaults. Throws
/// kFormat on unparsable input and kInvalidArgument on bad values.
// Checks every section, including the threshold ordering.
void validate_all(const PipelineConfig& config);

PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& json_text);

std::string to_json(const PipelineConfig& config);

/// Sets one named parameter ("tau_sim", "k", "check_stride", ...). Returns
/// false for an unknown name.
bool set_parameter(PipelineConfig& config, const std::string& name, double value);

}  // namespace neat
