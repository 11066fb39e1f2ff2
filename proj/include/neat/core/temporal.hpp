#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "neat/core/types.hpp"

namespace neat {

/// p_t = |c_t| / sum |c|. Signed activations enter through their absolute
/// value. An all-zero trajectory is reported as degenerate, not thrown.
struct TrajectoryWeights {
  std::vector<double> p;
  double l1_mass = 0.0;
  bool degenerate = false;
};

/// Throws ErrorKind::kInvalidArgument on an empty trajectory.
TrajectoryWeights normalize_trajectory(std::span<const double> c);

/// Relative center of mass (1/T) * sum_t t * p_t, t = 1..T. In [1/T, 1].
/// Empty when the trajectory carries no mass.
std::optional<double> center_of_mass(std::span<const double> c);

/// -sum_t p_t ln p_t with 0 ln 0 = 0. In [0, ln T]. Empty when massless.
std::optional<double> activation_entropy(std::span<const double> c);

struct TrajectoryStats {
  NeuronId neuron;
  std::uint32_t length = 0;
  double l1_mass = 0.0;
  std::optional<double> com;
  std::optional<double> entropy;

  bool degenerate() const { return !com.has_value(); }
};

TrajectoryStats trajectory_stats(const NeuronId& neuron, std::span<const double> c);

}  // namespace neat
