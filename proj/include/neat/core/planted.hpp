#pragma once

// Toy models with a known exit neuron, used as ground truth for attribution,
// calibration and controlled generation.

#include <cstdint>
#include <span>
#include <vector>

#include "neat/core/engine.hpp"

namespace neat {

/// Wires `neuron` so that fc1_k reads `read_direction` with gain
/// `read_gain` (c = sigma(read_gain) when the pre-FFN residual equals the
/// unit read direction) and fc2_k points along the termination token's
/// unembedding row with length `write_gain`. A negative write gain points
/// it away from the termination token.
void plant_exit_neuron(ModelWeights& weights, const NeuronId& neuron,
                       std::span<const float> read_direction, float read_gain,
                       TokenId termination, float write_gain);

/// Layout of the planted reasoning model.
///
/// Content tokens form a greedy successor chain (a bigram table written into
/// the embedding/unembedding pair on dedicated residual dimensions):
///
///   reasoning[0] -> ... -> reasoning[R-1] -> trigger -> ramp[0] -> ... -> ramp[M-1]
///
/// The trigger and each ramp token carry an increasing "stage" feature on
/// one residual dimension. The exit neuron reads that stage, so its
/// activation grows step by step once the trigger has been emitted, and
/// writes toward the termination token's unembedding row on a dimension no
/// token uses. Once its contribution outweighs the successor logit the
/// model emits the termination token. All remaining weights are random.
struct PlantedModelSpec {
  ModelDims dims{4, 48, 64, 40, 4};
  std::uint64_t seed = 7;
  NeuronId neuron{2, 17};
  std::uint32_t reasoning_length = 14;
  std::uint32_t ramp_length = 14;
  float read_gain = 2.0f;
  float write_gain = 2.0f;
  float successor_strength = 1.0f;
};

struct PlantedModel {
  ModelWeights weights;
  NeuronId neuron;
  TokenId termination = 0;
  TokenId trigger = 0;
  std::vector<TokenId> reasoning;  // pre-trigger chain
  std::vector<TokenId> ramp;       // post-trigger chain
};

/// Throws ErrorKind::kDimension when the chain does not fit the vocabulary
/// or the residual width.
PlantedModel build_planted_model(const PlantedModelSpec& spec);

/// Deterministic prompts of 2..5 reasoning-chain tokens.
std::vector<std::vector<TokenId>> planted_prompts(const PlantedModel& model, std::size_t count,
                                                  std::uint64_t seed);

}  // namespace neat
