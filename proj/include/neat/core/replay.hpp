#pragma once

// Offline evaluation of the controller over recorded traces, decision logs
// (.neatdec) and their aggregate summaries.
//
// A decision log is
//
//   # neatdec 1 name=<id> length=<T>
//   <t> <continue|suppress|exit> <rho|-> <phi|->
//
// where `length` is the reference (vanilla) length used for the length
// reduction rate LR = 1 - exit_step / length.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neat/core/calibration.hpp"
#include "neat/core/controller.hpp"

namespace neat {

struct DecisionLog {
  std::string name;
  std::optional<std::uint32_t> reference_length;
  std::vector<Decision> decisions;

  bool operator==(const DecisionLog&) const = default;

  std::optional<std::uint32_t> exit_step() const;
  /// 1 - exit/length when an exit fired, else 0. Throws kValidation when
  /// the reference length is missing.
  double length_reduction() const;
};

void write_decision_log(const DecisionLog& log, std::ostream& out);
void write_decision_log(const DecisionLog& log, const std::filesystem::path& path);
/// Throws LineError(kFormat) naming the offending line.
DecisionLog read_decision_log(std::istream& in);
DecisionLog read_decision_log(const std::filesystem::path& path);

using KindCounts = std::array<std::uint32_t, 3>;  // indexed by DecisionKind

struct TraceReplay {
  std::string name;
  std::uint32_t length = 0;  // recorded steps
  std::optional<std::uint32_t> exit_step;
  double length_reduction = 0.0;
  KindCounts counts{};
  // Suppress verdicts cannot change a recorded trace.
  std::uint32_t counterfactual_suppressions = 0;
  DecisionLog log;
};

struct SkippedTrace {
  std::string name;
  std::string reason;
};

struct ReplayReport {
  std::vector<TraceReplay> traces;
  std::vector<SkippedTrace> skipped;
  double mean_length_reduction = 0.0;
  std::optional<double> mean_exit_step;  // over traces that exited
  std::uint32_t total_counterfactual_suppressions = 0;
};

/// Runs a fresh controller over every recorded step up to the first Exit.
TraceReplay replay_trace(const ActivationTrace& trace, const ExitNeuronSet& set,
                         const ControllerConfig& config, std::string name);

struct NamedTrace {
  std::string name;
  ActivationTrace trace;
};

/// Traces the set cannot cover are skipped and listed, not thrown.
ReplayReport replay(std::span<const NamedTrace> traces, const ExitNeuronSet& set,
                    const ControllerConfig& config);

void write_replay_table(const ReplayReport& report, std::ostream& out);
void write_replay_records(const ReplayReport& report, std::ostream& out);

struct LogSummary {
  std::size_t logs = 0;
  KindCounts counts{};
  std::size_t exits = 0;
  std::optional<double> mean_exit_step;
  double mean_length_reduction = 0.0;
};

/// Throws kInvalidArgument on an empty input set.
LogSummary summarize_logs(std::span<const DecisionLog> logs);

void write_summary_table(const LogSummary& summary, std::ostream& out);
void write_summary_records(const LogSummary& summary, std::ostream& out);

}  // namespace neat
