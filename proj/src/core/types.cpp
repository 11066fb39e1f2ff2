#include "neat/core/decision.hpp"
#include "neat/core/errors.hpp"
#include "neat/core/types.hpp"
#include "neat/core/vocab.hpp"

namespace neat {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kVocabulary: return "vocabulary error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kCoverage: return "coverage error";
    case ErrorKind::kCompatibility: return "compatibility error";
    case ErrorKind::kPath: return "path error";
    case ErrorKind::kCalibrationInput: return "calibration input error";
    case ErrorKind::kNoSignal: return "no-signal error";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kInvalidArgument: return "invalid argument";
  }
  return "error";
}

void validate(const ModelDims& dims) {
  if (dims.layers == 0 || dims.d_model == 0 || dims.d_ff == 0 || dims.vocab == 0 ||
      dims.heads == 0) {
    fail(ErrorKind::kDimension, "all dims must be positive: " + describe(dims));
  }
  if (dims.d_model % dims.heads != 0) {
    fail(ErrorKind::kDimension, "d_model must be divisible by heads: " + describe(dims));
  }
  if (dims.d_ff < dims.d_model) {
    fail(ErrorKind::kDimension, "d_ff must be >= d_model: " + describe(dims));
  }
  if (dims.vocab < 8) {
    fail(ErrorKind::kDimension, "vocab must be >= 8: " + describe(dims));
  }
}

std::string describe(const ModelDims& dims) {
  return "L=" + std::to_string(dims.layers) + " d=" + std::to_string(dims.d_model) +
         " N=" + std::to_string(dims.d_ff) + " V=" + std::to_string(dims.vocab) +
         " heads=" + std::to_string(dims.heads);
}

std::string to_string(const NeuronId& id) {
  return "(" + std::to_string(id.layer) + ", " + std::to_string(id.index) + ")";
}

std::string_view to_string(DecisionKind kind) noexcept {
  switch (kind) {
    case DecisionKind::kContinue: return "continue";
    case DecisionKind::kSuppress: return "suppress";
    case DecisionKind::kExit: return "exit";
  }
  return "continue";
}

std::optional<DecisionKind> parse_decision_kind(std::string_view text) noexcept {
  if (text == "continue") return DecisionKind::kContinue;
  if (text == "suppress") return DecisionKind::kSuppress;
  if (text == "exit") return DecisionKind::kExit;
  return std::nullopt;
}

namespace toy_vocab {

std::vector<TokenId> reflection_tokens(std::uint32_t vocab) {
  std::vector<TokenId> ids;
  for (TokenId id = kFirstReflection; id < kFirstReflection + kReflectionStrings.size(); ++id) {
    if (id < vocab) ids.push_back(id);
  }
  return ids;
}

std::string token_text(TokenId id) {
  if (id == kTermination) return "</think>";
  if (id >= kFirstReflection && id < kFirstContent) {
    return std::string(kReflectionStrings[id - kFirstReflection]);
  }
  return "tok" + std::to_string(id);
}

}  // namespace toy_vocab
}  // namespace neat
