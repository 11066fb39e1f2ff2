#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "neat/core/calibration.hpp"
#include "neat/core/config.hpp"
#include "neat/core/engine.hpp"
#include "neat/core/planted.hpp"
#include "neat/core/replay.hpp"

namespace neat::testing {

// Mean live-run length reduction on the held-out planted prompts, measured
// with the controller attached to the engine and frozen here. Replay over
// the vanilla traces must land within 0.02 of it.
inline constexpr double kPlantedOracleLengthReduction = 0.2867;

inline constexpr std::size_t kCalibrationPrompts = 20;
inline constexpr std::size_t kHeldOutPrompts = 20;
inline constexpr std::uint64_t kPromptSeed = 11;

struct PlantedFixture {
  PlantedModel model;
  PipelineConfig config;
  std::vector<std::vector<TokenId>> calibration_prompts;
  std::vector<std::vector<TokenId>> held_out_prompts;
  std::vector<CalibrationSample> calibration;
  std::vector<NamedTrace> held_out;  // vanilla traces of the held-out prompts
};

inline PlantedFixture build_planted_fixture() {
  PlantedFixture f;
  f.model = build_planted_model(PlantedModelSpec{});
  f.config = default_config(f.model.weights.dims.vocab);
  auto prompts = planted_prompts(f.model, kCalibrationPrompts + kHeldOutPrompts, kPromptSeed);
  f.calibration_prompts.assign(prompts.begin(), prompts.begin() + kCalibrationPrompts);
  f.held_out_prompts.assign(prompts.begin() + kCalibrationPrompts, prompts.end());

  GenerationConfig gen = f.config.generation;
  gen.record_trace = true;
  for (std::size_t i = 0; i < f.calibration_prompts.size(); ++i) {
    auto r = generate(f.model.weights, f.calibration_prompts[i], gen);
    f.calibration.push_back({"cal_" + std::to_string(i), std::move(*r.trace)});
  }
  for (std::size_t i = 0; i < f.held_out_prompts.size(); ++i) {
    auto r = generate(f.model.weights, f.held_out_prompts[i], gen);
    f.held_out.push_back({"held_" + std::to_string(i), std::move(*r.trace)});
  }
  return f;
}

inline const PlantedFixture& planted_fixture() {
  static const PlantedFixture fixture = build_planted_fixture();
  return fixture;
}

// A scores-only trace shaped like a recorder output. Activations follow
// `columns[i](t)` for the monitored neuron i.
inline ActivationTrace synthetic_trace(const ModelDims& dims, std::vector<NeuronId> subset,
                                       const std::vector<std::vector<double>>& per_step, bool terminate) {
  ActivationTrace trace;
  trace.header.dims = dims;
  trace.header.termination_token = 0;
  trace.header.prompt = {11, 12};
  trace.header.mode = ActivationMode::kSubset;
  trace.header.subset = std::move(subset);
  trace.header.source = TraceSource::kRecorder;
  for (std::size_t t = 0; t < per_step.size(); ++t) {
    const bool last = t + 1 == per_step.size();
    trace.steps.push_back(TraceStep{static_cast<std::uint32_t>(t + 1), (last && terminate) ? 0u : 13u,
                                    per_step[t], {}});
  }
  return trace;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("neat_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace neat::testing
