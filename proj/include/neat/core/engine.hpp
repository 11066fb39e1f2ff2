#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "neat/core/decision.hpp"
#include "neat/core/trace.hpp"
#include "neat/core/types.hpp"

namespace neat {

/// Longest context the learned absolute position table covers.
inline constexpr std::uint32_t kMaxContext = 256;

enum class Activation : std::uint8_t {
  kSiLU = 0,  // sigmoid-weighted linear, x * sigmoid(x)
  kGELU = 1,  // gaussian-error linear, exact erf form
  kReLU = 2,
};

std::string_view to_string(Activation act) noexcept;
std::optional<Activation> parse_activation(std::string_view name) noexcept;
float apply_activation(Activation act, float x) noexcept;

/// Dense row-major float matrix.
struct Matrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::uint32_t r, std::uint32_t c) : rows(r), cols(c), data(std::size_t{r} * c, 0.0f) {}

  float& at(std::uint32_t r, std::uint32_t c) { return data[std::size_t{r} * cols + c]; }
  float at(std::uint32_t r, std::uint32_t c) const { return data[std::size_t{r} * cols + c]; }
  std::span<float> row(std::uint32_t r) { return {data.data() + std::size_t{r} * cols, cols}; }
  std::span<const float> row(std::uint32_t r) const {
    return {data.data() + std::size_t{r} * cols, cols};
  }

  bool operator==(const Matrix&) const = default;
};

struct LayerWeights {
  std::vector<float> attn_norm;  // d, RMSNorm gain ahead of attention
  Matrix wq, wk, wv, wo;         // d x d each
  Matrix fc1;                    // N x d; row k is fc1_k
  Matrix fc2;                    // d x N; column k is the subvalue fc2_k

  bool operator==(const LayerWeights&) const = default;
};

/// Immutable after construction; safe to share across threads.
struct ModelWeights {
  ModelDims dims;
  Activation activation = Activation::kSiLU;
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // kMaxContext x d
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;  // d
  Matrix unembedding;             // V x d

  bool operator==(const ModelWeights&) const = default;
};

/// Everything the forward pass exposes for one layer at the last position.
/// residual_out == pre_ffn + ffn_out and pre_ffn == residual_in + attn_out,
/// elementwise, exactly as computed.
struct LayerCapture {
  std::vector<float> residual_in;   // h^{l-1}
  std::vector<float> attn_out;      // A^l
  std::vector<float> pre_ffn;       // h^{l-1} + A^l
  std::vector<float> activations;   // c^l, length N
  std::vector<float> ffn_out;       // F^l
  std::vector<float> residual_out;  // h^l
};

struct StepOutput {
  std::vector<float> logits;  // length V
  std::vector<LayerCapture> layers;

  float activation(const NeuronId& id) const { return layers[id.layer].activations[id.index]; }
};

/// Deterministic random weights. Residual-writing matrices (wo, fc2) use
/// std 0.02/sqrt(L); everything else std 0.02; norm gains are 1.
ModelWeights init_random(const ModelDims& dims, std::uint64_t seed,
                         Activation act = Activation::kSiLU);

/// Full causal forward pass over `context`, reporting the last position.
StepOutput forward_step(const ModelWeights& weights, std::span<const TokenId> context);

/// RMSNorm with the model's epsilon; shared with the attribution logit lens.
inline constexpr double kNormEpsilon = 1e-5;

/// Numerically stable log-softmax evaluated in double.
std::vector<double> log_softmax(std::span<const float> logits);

// ---------------------------------------------------------------------------
// Generation

enum class Sampling : std::uint8_t { kGreedy = 0, kCategorical = 1 };

struct GenerationConfig {
  std::uint32_t max_steps = 64;
  Sampling sampling = Sampling::kGreedy;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  TokenId termination_token = 0;
  bool record_trace = false;
};

enum class StopReason : std::uint8_t { kTerminationToken = 0, kControllerExit = 1, kMaxSteps = 2 };

std::string_view to_string(StopReason reason) noexcept;

/// Per-step hook consulted by `generate`. Implementations may rewrite the
/// logits (suppression) and must not retain references past the call.
class StepController {
 public:
  virtual ~StepController() = default;

  /// Throws ErrorKind::kCompatibility if the controller cannot run on `dims`.
  virtual void check_compatible(const ModelDims& dims) const = 0;

  virtual Decision on_step(std::uint32_t step, const StepOutput& output,
                           std::span<float> logits) = 0;
};

struct GenerationResult {
  std::vector<TokenId> prompt;
  std::vector<TokenId> tokens;  // emitted tokens, termination token included
  std::vector<Decision> decisions;
  StopReason stop = StopReason::kMaxSteps;
  std::optional<ActivationTrace> trace;  // full-mode trace when requested

  std::uint32_t steps() const { return static_cast<std::uint32_t>(tokens.size()); }
};

/// Decoding loop. Step t (1-based) runs the forward pass on prompt plus the
/// t-1 tokens emitted so far. On a controller Exit the step's sample is
/// discarded and the termination token is emitted in its place.
GenerationResult generate(const ModelWeights& weights, std::span<const TokenId> prompt,
                          const GenerationConfig& config, StepController* controller = nullptr);

/// Draws from softmax(logits / temperature) using a platform-independent
/// mapping of the engine's 64-bit generator. Exposed for suppression tests.
class TokenSampler {
 public:
  explicit TokenSampler(std::uint64_t seed);

  TokenId greedy(std::span<const float> logits) const;
  TokenId categorical(std::span<const float> logits, double temperature);

 private:
  std::mt19937_64 rng_;
};

}  // namespace neat
