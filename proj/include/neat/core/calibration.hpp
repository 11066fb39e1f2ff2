#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neat/core/attribution.hpp"
#include "neat/core/engine.hpp"
#include "neat/core/trace.hpp"

namespace neat {

struct CalibrationConfig {
  std::size_t k = 300;
  double tau_cons = 0.6;
  double tau_com = 0.6;
  std::optional<double> tau_ent;  // entropy ceiling in nats, off by default
  std::size_t min_set_size = 0;   // selections below this are flagged

  bool operator==(const CalibrationConfig&) const = default;

  /// Throws ErrorKind::kInvalidArgument.
  void validate() const;
};

/// One calibration trace and the name it is reported under.
struct CalibrationSample {
  std::string id;
  ActivationTrace trace;
};

struct NeuronAggregate {
  NeuronId neuron;
  std::uint32_t appearances = 0;  // candidate lists containing the neuron
  double omega = 0.0;             // appearances / |D_cal|
  // Means over the samples where the neuron was a candidate and its
  // trajectory was monitored and non-degenerate.
  std::uint32_t trajectory_samples = 0;
  double mean_com = 0.0;
  double mean_entropy = 0.0;
  // Mean over the candidate samples that monitor the neuron.
  double mean_termination_activation = 0.0;
  double mean_score = 0.0;
};

struct AggregateStats {
  std::size_t sample_count = 0;
  std::vector<NeuronAggregate> neurons;  // ascending by neuron

  const NeuronAggregate* find(const NeuronId& id) const;
};

/// Lists and samples must pair up by sample id. Throws
/// ErrorKind::kCalibrationInput when a trace did not end on its termination
/// token.
AggregateStats aggregate_candidates(std::span<const CandidateList> lists,
                                    std::span<const CalibrationSample> samples);

enum ThresholdFailure : std::uint8_t {
  kFailNone = 0,
  kFailConsistency = 1 << 0,
  kFailCom = 1 << 1,
  kFailEntropy = 1 << 2,
  kFailNoTrajectory = 1 << 3,
};

struct NearMiss {
  NeuronAggregate stats;
  std::uint8_t failed = kFailNone;  // ThresholdFailure bits
  double shortfall = 0.0;           // summed distance below the thresholds
};

struct Selection {
  std::vector<NeuronId> neurons;  // ascending (layer, index)
  // Populated when the selection is empty or below min_set_size; closest
  // rejected neurons first.
  std::vector<NearMiss> near_misses;
  bool below_floor = false;

  bool empty() const { return neurons.empty(); }
};

/// Omega >= tau_cons and mean CoM >= tau_com (inclusive), plus the entropy
/// ceiling when enabled. Neurons without a usable trajectory never pass.
Selection select_exit_neurons(const AggregateStats& stats, const CalibrationConfig& config);

/// Elementwise mean of termination-step activations, aligned to `neurons`.
/// Throws ErrorKind::kCoverage naming the sample and neuron on a gap.
std::vector<double> compute_reference_pattern(std::span<const CalibrationSample> samples,
                                              std::span<const NeuronId> neurons);

struct ExitNeuronSet {
  ModelDims dims;
  std::vector<NeuronId> neurons;  // ascending (layer, index)
  std::vector<double> reference;  // mu_ref aligned to neurons
  CalibrationConfig config;
  std::uint64_t calibration_hash = 0;
  std::size_t sample_count = 0;

  bool operator==(const ExitNeuronSet&) const = default;

  std::size_t size() const { return neurons.size(); }
  /// Throws ErrorKind::kCompatibility when the set cannot be used on `dims`.
  void check_compatible(const ModelDims& model_dims) const;
};

/// `.neatset` text. Throws ErrorKind::kFormat / kValidation with line numbers.
void write_exit_set(const ExitNeuronSet& set, std::ostream& out);
void write_exit_set(const ExitNeuronSet& set, const std::filesystem::path& path);
ExitNeuronSet read_exit_set(std::istream& in);
ExitNeuronSet read_exit_set(const std::filesystem::path& path);

/// Order-independent FNV-1a digest of the serialized calibration traces.
std::uint64_t calibration_hash(std::span<const CalibrationSample> samples);

enum class CalibrationStatus : std::uint8_t { kOk = 0, kEmptySet = 1, kBelowFloor = 2 };

struct CalibrationResult {
  CalibrationStatus status = CalibrationStatus::kOk;
  ExitNeuronSet set;
  AggregateStats stats;
  Selection selection;
  std::vector<CandidateList> candidates;  // per sample, input order
};

/// rank -> aggregate -> select -> reference pattern. `weights` is needed for
/// samples whose snapshots carry raw residuals and may be null otherwise.
/// Throws ErrorKind::kNoSignal when every candidate list is empty.
CalibrationResult calibrate(std::span<const CalibrationSample> samples, const ModelWeights* weights,
                            const CalibrationConfig& config);

/// Human-readable per-neuron table (neuron, Omega, CoM, entropy, mu_ref).
void write_calibration_table(const CalibrationResult& result, std::ostream& out);
/// Same content as JSON lines.
void write_calibration_records(const CalibrationResult& result, std::ostream& out);

}  // namespace neat
