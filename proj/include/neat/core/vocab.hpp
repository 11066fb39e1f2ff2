#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "neat/core/types.hpp"

namespace neat::toy_vocab {

// Fixed ids of the toy vocabulary (see docs/model_card.md).
inline constexpr TokenId kTermination = 0;  // "</think>"
inline constexpr TokenId kFirstReflection = 1;
inline constexpr TokenId kFirstContent = 11;

/// Reflection words and their leading-space variants, in id order 1..10.
inline constexpr std::array<std::string_view, 10> kReflectionStrings = {
    "Wait", " Wait", "Hmm", " Hmm", "But", " But",
    "Alternatively", " Alternatively", "However", " However"};

/// Reflection ids that exist in a vocabulary of size `vocab`.
std::vector<TokenId> reflection_tokens(std::uint32_t vocab);

std::string token_text(TokenId id);

}  // namespace neat::toy_vocab
