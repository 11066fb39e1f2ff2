#pragma once

// Neuron importance for predicting the termination token.
//
// Imp(v) = log p(w_end | pre_ffn + c_k * fc2_k) - log p(w_end | pre_ffn)
//
// where pre_ffn = h^{l-1} + A^l at the neuron's layer and p(. | r) is the
// logit lens: final RMSNorm, unembedding, softmax. Everything is in nats.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "neat/core/engine.hpp"
#include "neat/core/trace.hpp"

namespace neat {

/// log softmax(U * rmsnorm(residual))[token], evaluated in double.
double logit_lens_logprob(const ModelWeights& weights, std::span<const double> residual,
                          TokenId token);

/// Throws ErrorKind::kPath when the snapshot only carries stored scores.
double neuron_importance(const ModelWeights& weights, const AttributionSnapshot& snapshot,
                         const NeuronId& neuron, TokenId termination);

/// Importance of the whole FFN block of `layer`: logprob(pre_ffn + F^l) -
/// logprob(pre_ffn). Individual neuron scores do not sum to it.
double layer_importance(const ModelWeights& weights, const AttributionSnapshot& snapshot,
                        std::uint32_t layer, TokenId termination);

struct ImportanceTable {
  std::string sample_id;
  std::vector<NeuronScore> scores;  // ascending by neuron
};

/// Scores every one of the L*N neurons from raw snapshot data.
ImportanceTable importance_table(const ModelWeights& weights, const AttributionSnapshot& snapshot,
                                 TokenId termination, std::string sample_id);

/// Wraps scores precomputed by an external recorder.
ImportanceTable importance_table(const AttributionSnapshot& snapshot, std::string sample_id);

struct CandidateList {
  std::string sample_id;
  // Strictly positive scores, descending; ties by (layer, index) ascending.
  std::vector<NeuronScore> candidates;
};

CandidateList rank_candidates(const ImportanceTable& table, std::size_t k);

CandidateList rank_candidates(const ModelWeights& weights, const AttributionSnapshot& snapshot,
                              TokenId termination, std::size_t k, std::string sample_id = {});

/// `.neatimp` audit dump: a comment header, then `layer index score` lines.
void write_importance_table(const ImportanceTable& table, std::ostream& out);

}  // namespace neat
