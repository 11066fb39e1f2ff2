#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace neat {

using TokenId = std::uint32_t;

/// Shape of a decoder-only model. `d_ff` is the FFN expansion width (the
/// number of neurons per layer).
struct ModelDims {
  std::uint32_t layers = 0;
  std::uint32_t d_model = 0;
  std::uint32_t d_ff = 0;
  std::uint32_t vocab = 0;
  std::uint32_t heads = 0;

  bool operator==(const ModelDims&) const = default;

  std::size_t neurons_per_layer() const { return d_ff; }
  std::size_t total_neurons() const {
    return static_cast<std::size_t>(layers) * d_ff;
  }
};

/// Throws ErrorKind::kDimension when any invariant fails: every field
/// positive, d_model divisible by heads, d_ff >= d_model, vocab >= 8.
void validate(const ModelDims& dims);

std::string describe(const ModelDims& dims);

/// Coordinate of one FFN neuron. Ordered by (layer, index).
struct NeuronId {
  std::uint32_t layer = 0;
  std::uint32_t index = 0;

  auto operator<=>(const NeuronId&) const = default;
  bool operator==(const NeuronId&) const = default;
};

inline bool fits(const NeuronId& id, const ModelDims& dims) {
  return id.layer < dims.layers && id.index < dims.d_ff;
}

std::string to_string(const NeuronId& id);

/// Flat position of `id` in a layer-major L x N activation block.
inline std::size_t flat_index(const NeuronId& id, const ModelDims& dims) {
  return static_cast<std::size_t>(id.layer) * dims.d_ff + id.index;
}

}  // namespace neat
