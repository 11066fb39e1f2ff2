#include "neat/core/temporal.hpp"

#include <cmath>

#include "neat/core/errors.hpp"

namespace neat {

TrajectoryWeights normalize_trajectory(std::span<const double> c) {
  if (c.empty()) fail(ErrorKind::kInvalidArgument, "trajectory must have at least one step");
  TrajectoryWeights w;
  for (double v : c) w.l1_mass += std::abs(v);
  w.p.assign(c.size(), 0.0);
  if (w.l1_mass == 0.0) {
    w.degenerate = true;
    return w;
  }
  for (std::size_t t = 0; t < c.size(); ++t) w.p[t] = std::abs(c[t]) / w.l1_mass;
  return w;
}

std::optional<double> center_of_mass(std::span<const double> c) {
  const TrajectoryWeights w = normalize_trajectory(c);
  if (w.degenerate) return std::nullopt;
  double acc = 0.0;
  for (std::size_t t = 0; t < w.p.size(); ++t) acc += static_cast<double>(t + 1) * w.p[t];
  return acc / static_cast<double>(w.p.size());
}

std::optional<double> activation_entropy(std::span<const double> c) {
  const TrajectoryWeights w = normalize_trajectory(c);
  if (w.degenerate) return std::nullopt;
  double h = 0.0;
  for (double p : w.p) {
    if (p > 0.0) h -= p * std::log(p);
  }
  // A one-hot trajectory gives -1 * log(1) = -0.0; report it as +0.
  return h + 0.0;
}

TrajectoryStats trajectory_stats(const NeuronId& neuron, std::span<const double> c) {
  TrajectoryStats s;
  s.neuron = neuron;
  s.length = static_cast<std::uint32_t>(c.size());
  const TrajectoryWeights w = normalize_trajectory(c);
  s.l1_mass = w.l1_mass;
  s.com = center_of_mass(c);
  s.entropy = activation_entropy(c);
  return s;
}

}  // namespace neat
