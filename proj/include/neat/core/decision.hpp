#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace neat {

/// Evidence behind one controller verdict: cosine similarity `rho` between
/// the monitored activations and the reference pattern, and the magnitude
/// ratio `phi` of their L2 norms.
struct AlignmentSignal {
  double rho = 0.0;
  double phi = 0.0;
  std::uint32_t step = 0;

  bool operator==(const AlignmentSignal&) const = default;
};

enum class DecisionKind : std::uint8_t { kContinue = 0, kSuppress = 1, kExit = 2 };

std::string_view to_string(DecisionKind kind) noexcept;
std::optional<DecisionKind> parse_decision_kind(std::string_view text) noexcept;

struct Decision {
  std::uint32_t step = 0;
  DecisionKind kind = DecisionKind::kContinue;
  // Empty on steps skipped by stride or warmup.
  std::optional<AlignmentSignal> evidence;

  bool operator==(const Decision&) const = default;
};

}  // namespace neat
