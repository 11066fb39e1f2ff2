#pragma once

// Activation traces: one decoding run as line-delimited JSON (.neatrace).
//
//   line 1      header   {"neat_trace":1,"dims":{...},"termination_token":...,
//                         "prompt":[...],"mode":"full"|"subset",
//                         "subset":[[layer,index],...],"source":"engine"|"recorder"}
//   line 2..    steps    {"t":1,"token":17,"act":[...],"top":[[id,logprob],...]}
//   last line   snapshot {"snapshot":{"step":T,"pre_ffn":[[...]],"act":[[...]]}}
//                     or {"snapshot":{"step":T,"scores":[[layer,index,score],...]}}
//
// Steps are indexed per decoded token. In full mode "act" is the layer-major
// L*N activation block; in subset mode it follows the header's subset order.
// docs/trace_format.md carries the full schema.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "neat/core/errors.hpp"
#include "neat/core/types.hpp"

namespace neat {

inline constexpr int kTraceFormatVersion = 1;
inline constexpr std::string_view kTraceExtension = ".neatrace";

enum class ActivationMode : std::uint8_t { kFull = 0, kSubset = 1 };
enum class TraceSource : std::uint8_t { kEngine = 0, kRecorder = 1 };

struct TraceHeader {
  int version = kTraceFormatVersion;
  ModelDims dims;
  TokenId termination_token = 0;
  std::vector<TokenId> prompt;
  ActivationMode mode = ActivationMode::kFull;
  std::vector<NeuronId> subset;  // non-empty iff mode == kSubset
  TraceSource source = TraceSource::kEngine;

  bool operator==(const TraceHeader&) const = default;

  /// Length every step's activation vector must have.
  std::size_t activation_width() const;
  /// Position of `id` in a step's activation vector, if monitored.
  std::optional<std::size_t> column_of(const NeuronId& id) const;
};

struct TokenLogprob {
  TokenId token = 0;
  double logprob = 0.0;

  bool operator==(const TokenLogprob&) const = default;
};

struct TraceStep {
  std::uint32_t t = 0;  // 1-based
  TokenId token = 0;
  std::vector<double> activations;
  std::vector<TokenLogprob> top;  // optional logits summary

  bool operator==(const TraceStep&) const = default;
};

/// Residual and activations of every layer at the termination step.
struct RawAttribution {
  std::vector<std::vector<double>> pre_ffn;      // L x d
  std::vector<std::vector<double>> activations;  // L x N

  bool operator==(const RawAttribution&) const = default;
};

struct NeuronScore {
  NeuronId neuron;
  double score = 0.0;

  bool operator==(const NeuronScore&) const = default;
};

struct AttributionSnapshot {
  std::uint32_t step = 0;
  // Either raw residuals (engine path) or importance scores computed by an
  // external recorder.
  std::variant<RawAttribution, std::vector<NeuronScore>> data;

  bool operator==(const AttributionSnapshot&) const = default;

  bool has_raw() const { return std::holds_alternative<RawAttribution>(data); }
  const RawAttribution& raw() const { return std::get<RawAttribution>(data); }
  const std::vector<NeuronScore>& scores() const {
    return std::get<std::vector<NeuronScore>>(data);
  }
};

struct ActivationTrace {
  TraceHeader header;
  std::vector<TraceStep> steps;
  std::optional<AttributionSnapshot> snapshot;

  bool operator==(const ActivationTrace&) const = default;

  /// Last emitted token is the termination token.
  bool terminated() const;
  std::uint32_t length() const { return static_cast<std::uint32_t>(steps.size()); }
};

/// Every invariant the reader and writer enforce gets its own tag.
enum class TraceViolation : std::uint8_t {
  kBadMagic,
  kUnsupportedVersion,
  kMalformedRecord,
  kInvalidDims,
  kSubsetMismatch,      // subset list present iff mode == subset
  kNeuronOutOfRange,
  kDuplicateNeuron,
  kTokenOutOfRange,
  kStepOrder,           // t must be 1, 2, 3, ...
  kEarlyTermination,    // termination token before the last step
  kActivationWidth,
  kNonFinite,
  kSnapshotShape,
  kSnapshotStep,        // snapshot must sit on the termination step
  kSnapshotWithoutTermination,
  kTrailingRecord,      // anything after the snapshot line
};

std::string_view to_string(TraceViolation v) noexcept;

class TraceError : public Error {
 public:
  TraceError(ErrorKind kind, TraceViolation violation, std::size_t line, const std::string& what);

  TraceViolation violation() const noexcept { return violation_; }
  /// 1-based line of the offending record in the file layout (header on
  /// line 1, step t on line t + 1, snapshot last); 0 when unknown.
  std::size_t line() const noexcept { return line_; }
  /// Message without the location prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  TraceViolation violation_;
  std::size_t line_;
  std::string detail_;
};

/// Throws TraceError (ErrorKind::kValidation) on the first violated invariant.
void validate(const ActivationTrace& trace);

/// Validates, then writes. Returns the number of bytes written.
std::size_t write_trace(const ActivationTrace& trace, std::ostream& out);
std::size_t write_trace(const ActivationTrace& trace, const std::filesystem::path& path);

/// Unknown keys are ignored. Bad magic or version raise ErrorKind::kFormat,
/// everything else ErrorKind::kValidation; both carry the line number.
ActivationTrace read_trace(std::istream& in);
ActivationTrace read_trace(const std::filesystem::path& path);

/// Activation of `neuron` at steps 1..T. Throws ErrorKind::kCoverage when
/// the trace does not monitor it.
std::vector<double> extract_trajectory(const ActivationTrace& trace, const NeuronId& neuron);

}  // namespace neat
