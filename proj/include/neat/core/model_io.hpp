#pragma once

// Model files: "NEATM1", then L, d, N, V, heads as little-endian u32, then
// every tensor as little-endian f32 row-major in this order:
//
//   token_embedding      V x d
//   position_embedding   kMaxContext x d
//   per layer:           attn_norm d, wq d x d, wk, wv, wo, fc1 N x d, fc2 d x N
//   final_norm           d
//   unembedding          V x d
//
// The activation function is not stored; loaders pick it (SiLU by default).

#include <filesystem>
#include <string_view>

#include "neat/core/engine.hpp"

namespace neat {

inline constexpr std::string_view kModelMagic = "NEATM1";

/// Exact byte size of a model file with these dims.
std::size_t model_file_size(const ModelDims& dims);

void save_model(const ModelWeights& weights, const std::filesystem::path& path);

/// Throws ErrorKind::kFormat on bad magic or a length that disagrees with
/// the dims record, ErrorKind::kDimension on invalid dims.
ModelWeights load_model(const std::filesystem::path& path, Activation act = Activation::kSiLU);

}  // namespace neat
