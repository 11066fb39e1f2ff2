#include "neat/core/controller.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "neat/core/errors.hpp"

namespace neat {

std::string_view to_string(InterventionMode mode) noexcept {
  switch (mode) {
    case InterventionMode::kFull: return "full";
    case InterventionMode::kSuppressOnly: return "suppress-only";
    case InterventionMode::kExitOnly: return "exit-only";
  }
  return "unknown";
}

std::optional<InterventionMode> parse_intervention_mode(std::string_view text) noexcept {
  if (text == "full") return InterventionMode::kFull;
  if (text == "suppress-only") return InterventionMode::kSuppressOnly;
  if (text == "exit-only") return InterventionMode::kExitOnly;
  return std::nullopt;
}

void ControllerConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::kInvalidArgument, what); };
  if (!std::isfinite(tau_sim) || !std::isfinite(tau_sup) || !std::isfinite(tau_mag)) {
    bad("controller thresholds must be finite");
  }
  if (!(tau_sup >= 0.0 && tau_sup < tau_sim && tau_sim <= 1.0)) {
    bad("controller thresholds need 0 <= tau_sup < tau_sim <= 1");
  }
  if (tau_mag < 0.0) bad("tau_mag must be >= 0");
  if (check_stride < 1) bad("check_stride must be >= 1");
  if (std::find(reflection_tokens.begin(), reflection_tokens.end(), termination_token) !=
      reflection_tokens.end()) {
    bad("the termination token cannot also be a suppressed reflection token");
  }
}

AlignmentSignal alignment(std::span<const double> current, std::span<const double> reference,
                          std::uint32_t step) {
  if (current.size() != reference.size()) {
    fail(ErrorKind::kCompatibility, "monitored activations have length " + std::to_string(current.size()) +
                                        ", reference pattern has " + std::to_string(reference.size()));
  }
  double dot = 0.0, aa = 0.0, mm = 0.0;
  for (std::size_t i = 0; i < current.size(); ++i) {
    dot += current[i] * reference[i];
    aa += current[i] * current[i];
    mm += reference[i] * reference[i];
  }
  if (!(mm > 0.0)) fail(ErrorKind::kInvalidArgument, "reference pattern has zero norm");
  const double norm_a = std::sqrt(aa);
  const double norm_m = std::sqrt(mm);
  AlignmentSignal s;
  s.step = step;
  s.phi = norm_a / norm_m;
  // A silent step carries no direction, so it cannot look aligned.
  s.rho = norm_a > 0.0 ? std::clamp(dot / (norm_a * norm_m), -1.0, 1.0) : 0.0;
  return s;
}

DecisionKind decide(const AlignmentSignal& signal, const ControllerConfig& config) {
  DecisionKind kind = DecisionKind::kContinue;
  if (signal.phi > config.tau_mag) {
    if (signal.rho > config.tau_sim) {
      kind = DecisionKind::kExit;
    } else if (signal.rho > config.tau_sup) {
      kind = DecisionKind::kSuppress;
    }
  }
  if (config.mode == InterventionMode::kSuppressOnly && kind == DecisionKind::kExit) {
    kind = DecisionKind::kSuppress;
  } else if (config.mode == InterventionMode::kExitOnly && kind == DecisionKind::kSuppress) {
    kind = DecisionKind::kContinue;
  }
  return kind;
}

void apply_suppression(std::span<float> logits, std::span<const TokenId> ids) {
  for (TokenId id : ids) {
    if (id >= logits.size()) {
      fail(ErrorKind::kVocabulary, "suppressed token " + std::to_string(id) + " outside vocab of " +
                                       std::to_string(logits.size()));
    }
  }
  for (TokenId id : ids) logits[id] = -std::numeric_limits<float>::infinity();
}

ExitController::ExitController(ExitNeuronSet set, ControllerConfig config)
    : set_(std::move(set)), config_(std::move(config)) {
  config_.validate();
  if (set_.neurons.empty()) fail(ErrorKind::kInvalidArgument, "exit-neuron set is empty");
  if (set_.neurons.size() != set_.reference.size()) {
    fail(ErrorKind::kInvalidArgument, "exit-neuron set and reference pattern differ in length");
  }
  double mm = 0.0;
  for (double v : set_.reference) mm += v * v;
  if (!(mm > 0.0)) fail(ErrorKind::kInvalidArgument, "reference pattern has zero norm");
  scratch_.resize(set_.neurons.size());
}

bool ExitController::evaluates(std::uint32_t t) const {
  return t >= config_.warmup_steps && t % config_.check_stride == 0;
}

Decision ExitController::step(std::uint32_t t, std::span<const double> monitored, std::span<float> logits) {
  Decision d;
  d.step = t;
  if (evaluates(t)) {
    const AlignmentSignal signal = alignment(monitored, set_.reference, t);
    d.kind = decide(signal, config_);
    d.evidence = signal;
    if (d.kind == DecisionKind::kSuppress && !logits.empty()) {
      apply_suppression(logits, config_.reflection_tokens);
    }
  }
  log_.push_back(d);
  return d;
}

void ExitController::check_compatible(const ModelDims& dims) const {
  set_.check_compatible(dims);
  if (config_.termination_token >= dims.vocab) {
    fail(ErrorKind::kCompatibility, "termination token outside vocab of " + std::to_string(dims.vocab));
  }
  for (TokenId id : config_.reflection_tokens) {
    if (id >= dims.vocab) {
      fail(ErrorKind::kCompatibility, "reflection token " + std::to_string(id) + " outside vocab of " +
                                          std::to_string(dims.vocab));
    }
  }
}

Decision ExitController::on_step(std::uint32_t t, const StepOutput& output, std::span<float> logits) {
  for (std::size_t i = 0; i < set_.neurons.size(); ++i) scratch_[i] = output.activation(set_.neurons[i]);
  return step(t, scratch_, logits);
}

std::vector<std::size_t> ExitController::trace_columns(const TraceHeader& header) const {
  set_.check_compatible(header.dims);
  std::vector<std::size_t> columns;
  columns.reserve(set_.neurons.size());
  for (const auto& id : set_.neurons) {
    const auto column = header.column_of(id);
    if (!column) fail(ErrorKind::kCoverage, "trace does not monitor exit neuron " + to_string(id));
    columns.push_back(*column);
  }
  return columns;
}

Decision ExitController::observe(const TraceStep& step_record, std::span<const std::size_t> columns) {
  if (columns.size() != set_.neurons.size()) {
    fail(ErrorKind::kInvalidArgument, "column map does not match the exit-neuron set");
  }
  for (std::size_t i = 0; i < columns.size(); ++i) scratch_[i] = step_record.activations.at(columns[i]);
  return step(step_record.t, scratch_);
}

}  // namespace neat
