#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "neat/core/calibration.hpp"
#include "neat/core/decision.hpp"
#include "neat/core/engine.hpp"
#include "neat/core/trace.hpp"

namespace neat {

/// Which interventions may fire. kSuppressOnly demotes Exit to Suppress,
/// kExitOnly demotes Suppress to Continue.
enum class InterventionMode : std::uint8_t { kFull = 0, kSuppressOnly = 1, kExitOnly = 2 };

std::string_view to_string(InterventionMode mode) noexcept;
std::optional<InterventionMode> parse_intervention_mode(std::string_view text) noexcept;

struct ControllerConfig {
  double tau_sim = 0.6;
  double tau_sup = 0.4;
  double tau_mag = 0.2;
  std::vector<TokenId> reflection_tokens;
  TokenId termination_token = 0;
  std::uint32_t check_stride = 1;
  std::uint32_t warmup_steps = 0;  // steps t < warmup_steps always Continue
  InterventionMode mode = InterventionMode::kFull;

  bool operator==(const ControllerConfig&) const = default;

  /// 0 <= tau_sup < tau_sim <= 1, tau_mag >= 0, stride >= 1, termination
  /// token not among the reflection tokens. Throws kInvalidArgument.
  void validate() const;
};

/// rho = <a, mu> / (|a| |mu|), 0 when |a| = 0; phi = |a| / |mu|.
/// Throws kCompatibility on a length mismatch and kInvalidArgument when
/// |mu| = 0.
AlignmentSignal alignment(std::span<const double> current, std::span<const double> reference,
                          std::uint32_t step = 0);

/// Exit iff rho > tau_sim and phi > tau_mag; Suppress iff
/// tau_sup < rho <= tau_sim and phi > tau_mag; Continue otherwise. Then the
/// intervention mode is applied.
DecisionKind decide(const AlignmentSignal& signal, const ControllerConfig& config);

/// Sets the listed logits to -infinity. Throws kVocabulary on an id >= size.
void apply_suppression(std::span<float> logits, std::span<const TokenId> ids);

/// Streaming controller for one decoding stream. Not synchronized.
class ExitController final : public StepController {
 public:
  ExitController(ExitNeuronSet set, ControllerConfig config);

  const ExitNeuronSet& exit_set() const { return set_; }
  const ControllerConfig& config() const { return config_; }
  const std::vector<Decision>& log() const { return log_; }

  /// Core step on an already gathered a_t (set order). Rewrites `logits`
  /// on Suppress when non-empty.
  Decision step(std::uint32_t t, std::span<const double> monitored, std::span<float> logits = {});

  void check_compatible(const ModelDims& dims) const override;
  Decision on_step(std::uint32_t t, const StepOutput& output, std::span<float> logits) override;

  /// Columns of the set's neurons in a trace's activation vectors. Throws
  /// kCoverage when any is unmonitored, kCompatibility on a dims mismatch.
  std::vector<std::size_t> trace_columns(const TraceHeader& header) const;

  /// Replays one recorded step; suppression is observational.
  Decision observe(const TraceStep& step, std::span<const std::size_t> columns);

 private:
  bool evaluates(std::uint32_t t) const;

  ExitNeuronSet set_;
  ControllerConfig config_;
  std::vector<Decision> log_;
  std::vector<double> scratch_;
};

}  // namespace neat
