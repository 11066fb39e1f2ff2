#include "neat/core/planted.hpp"

#include <cmath>
#include <random>

#include "neat/core/errors.hpp"
#include "neat/core/vocab.hpp"

namespace neat {

void plant_exit_neuron(ModelWeights& weights, const NeuronId& neuron,
                       std::span<const float> read_direction, float read_gain,
                       TokenId termination, float write_gain) {
  const ModelDims& dims = weights.dims;
  if (!fits(neuron, dims)) {
    fail(ErrorKind::kDimension, "planted neuron " + to_string(neuron) + " outside " + describe(dims));
  }
  if (termination >= dims.vocab) {
    fail(ErrorKind::kVocabulary, "termination token " + std::to_string(termination) + " >= vocab");
  }
  if (read_direction.size() != dims.d_model) {
    fail(ErrorKind::kDimension, "read direction must have length d_model");
  }

  double read_norm = 0.0;
  for (float v : read_direction) read_norm += double{v} * double{v};
  read_norm = std::sqrt(read_norm);
  if (read_norm == 0.0) fail(ErrorKind::kInvalidArgument, "read direction must be non-zero");

  auto fc1_row = weights.layers[neuron.layer].fc1.row(neuron.index);
  for (std::uint32_t i = 0; i < dims.d_model; ++i) {
    fc1_row[i] = static_cast<float>(double{read_gain} * double{read_direction[i]} / read_norm);
  }

  auto target = weights.unembedding.row(termination);
  double target_norm = 0.0;
  for (float v : target) target_norm += double{v} * double{v};
  target_norm = std::sqrt(target_norm);
  if (target_norm == 0.0) fail(ErrorKind::kInvalidArgument, "termination unembedding row is zero");

  Matrix& fc2 = weights.layers[neuron.layer].fc2;
  for (std::uint32_t i = 0; i < dims.d_model; ++i) {
    fc2.at(i, neuron.index) = static_cast<float>(double{write_gain} * double{target[i]} / target_norm);
  }
}

PlantedModel build_planted_model(const PlantedModelSpec& spec) {
  const ModelDims& dims = spec.dims;
  validate(dims);
  const std::uint32_t chain = spec.reasoning_length + 1 + spec.ramp_length;
  if (spec.reasoning_length == 0 || spec.ramp_length == 0) {
    fail(ErrorKind::kInvalidArgument, "planted model needs non-empty reasoning and ramp chains");
  }
  if (toy_vocab::kFirstContent + chain > dims.vocab) {
    fail(ErrorKind::kDimension, "planted chain of " + std::to_string(chain) +
                                    " tokens does not fit vocab " + std::to_string(dims.vocab));
  }
  // One successor slot per chain token plus the stage and termination dims.
  if (chain + 2 > dims.d_model) {
    fail(ErrorKind::kDimension, "planted chain of " + std::to_string(chain) +
                                    " tokens needs d_model >= " + std::to_string(chain + 2));
  }

  PlantedModel model;
  model.weights = init_random(dims, spec.seed, Activation::kSiLU);
  model.neuron = spec.neuron;
  model.termination = toy_vocab::kTermination;

  std::vector<TokenId> order;
  for (std::uint32_t i = 0; i < chain; ++i) order.push_back(toy_vocab::kFirstContent + i);
  model.reasoning.assign(order.begin(), order.begin() + spec.reasoning_length);
  model.trigger = order[spec.reasoning_length];
  model.ramp.assign(order.begin() + spec.reasoning_length + 1, order.end());

  const std::uint32_t stage_dim = dims.d_model - 2;
  const std::uint32_t end_dim = dims.d_model - 1;
  Matrix& embed = model.weights.token_embedding;
  Matrix& unembed = model.weights.unembedding;

  // Successor table: token at slot s writes e_s, its successor reads e_s.
  for (std::uint32_t s = 0; s < chain; ++s) {
    const TokenId token = order[s];
    const TokenId successor = s + 1 < chain ? order[s + 1] : token;
    embed.at(token, s) = spec.successor_strength;
    unembed.at(successor, s) = spec.successor_strength;
  }

  // Stage feature: trigger at 1/(M+1), ramp[i] at (i+2)/(M+1).
  const float steps = static_cast<float>(spec.ramp_length + 1);
  embed.at(model.trigger, stage_dim) = 1.0f / steps;
  for (std::uint32_t i = 0; i < spec.ramp_length; ++i) {
    embed.at(model.ramp[i], stage_dim) = static_cast<float>(i + 2) / steps;
  }

  unembed.at(model.termination, end_dim) = 1.0f;

  std::vector<float> read(dims.d_model, 0.0f);
  read[stage_dim] = 1.0f;
  plant_exit_neuron(model.weights, spec.neuron, read, spec.read_gain, model.termination,
                    spec.write_gain);
  return model;
}

std::vector<std::vector<TokenId>> planted_prompts(const PlantedModel& model, std::size_t count,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<TokenId>> prompts;
  prompts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = 2 + static_cast<std::size_t>(rng() % 4);
    std::vector<TokenId> prompt;
    for (std::size_t j = 0; j < len; ++j) {
      prompt.push_back(model.reasoning[rng() % model.reasoning.size()]);
    }
    prompts.push_back(std::move(prompt));
  }
  return prompts;
}

}  // namespace neat
