#include "neat/core/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "neat/core/errors.hpp"
#include "text.hpp"

namespace neat {
namespace {

void check_token(const ModelWeights& weights, TokenId token) {
  if (token >= weights.dims.vocab) {
    fail(ErrorKind::kVocabulary, "token id " + std::to_string(token) + " >= vocab " +
                                     std::to_string(weights.dims.vocab));
  }
}

// Logit lens with a reusable scratch buffer; assumes validated inputs.
class LogitLens {
 public:
  explicit LogitLens(const ModelWeights& weights)
      : weights_(weights), normed_(weights.dims.d_model), logits_(weights.dims.vocab) {}

  double logprob(std::span<const double> residual, TokenId token) {
    const std::size_t d = residual.size();
    double sq = 0.0;
    for (double v : residual) sq += v * v;
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(d) + kNormEpsilon);
    for (std::size_t i = 0; i < d; ++i) normed_[i] = residual[i] * inv * double{weights_.final_norm[i]};

    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::uint32_t v = 0; v < weights_.dims.vocab; ++v) {
      const auto row = weights_.unembedding.row(v);
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += double{row[i]} * normed_[i];
      logits_[v] = acc;
      max_logit = std::max(max_logit, acc);
    }
    double total = 0.0;
    for (double l : logits_) total += std::exp(l - max_logit);
    return logits_[token] - max_logit - std::log(total);
  }

 private:
  const ModelWeights& weights_;
  std::vector<double> normed_;
  std::vector<double> logits_;
};

const RawAttribution& require_raw(const AttributionSnapshot& snapshot) {
  if (!snapshot.has_raw()) {
    fail(ErrorKind::kPath,
         "snapshot carries precomputed importance scores, not raw residuals; use the stored scores");
  }
  return snapshot.raw();
}

void check_snapshot(const ModelWeights& weights, const RawAttribution& raw) {
  const ModelDims& dims = weights.dims;
  if (raw.pre_ffn.size() != dims.layers || raw.activations.size() != dims.layers) {
    fail(ErrorKind::kCompatibility, "snapshot layer count does not match model " + describe(dims));
  }
  for (std::uint32_t l = 0; l < dims.layers; ++l) {
    if (raw.pre_ffn[l].size() != dims.d_model || raw.activations[l].size() != dims.d_ff) {
      fail(ErrorKind::kCompatibility, "snapshot layer " + std::to_string(l) +
                                          " width does not match model " + describe(dims));
    }
  }
}

// logprob(residual + c * fc2_k) - base, with c == 0 scoring exactly 0.
double neuron_delta(LogitLens& lens, const ModelWeights& weights, std::span<const double> residual,
                    double base, const NeuronId& neuron, double activation, TokenId termination,
                    std::vector<double>& shifted) {
  if (activation == 0.0) return 0.0;
  const Matrix& fc2 = weights.layers[neuron.layer].fc2;
  for (std::uint32_t i = 0; i < weights.dims.d_model; ++i) {
    shifted[i] = residual[i] + activation * double{fc2.at(i, neuron.index)};
  }
  return lens.logprob(shifted, termination) - base;
}

}  // namespace

double logit_lens_logprob(const ModelWeights& weights, std::span<const double> residual, TokenId token) {
  check_token(weights, token);
  if (residual.size() != weights.dims.d_model) {
    fail(ErrorKind::kDimension, "residual length " + std::to_string(residual.size()) +
                                    " != d_model " + std::to_string(weights.dims.d_model));
  }
  for (double v : residual) {
    if (!std::isfinite(v)) fail(ErrorKind::kInvalidArgument, "residual must be finite");
  }
  LogitLens lens(weights);
  return lens.logprob(residual, token);
}

double neuron_importance(const ModelWeights& weights, const AttributionSnapshot& snapshot,
                         const NeuronId& neuron, TokenId termination) {
  const RawAttribution& raw = require_raw(snapshot);
  check_token(weights, termination);
  check_snapshot(weights, raw);
  if (!fits(neuron, weights.dims)) {
    fail(ErrorKind::kCompatibility, "neuron " + to_string(neuron) + " outside " + describe(weights.dims));
  }
  LogitLens lens(weights);
  const auto& residual = raw.pre_ffn[neuron.layer];
  const double base = lens.logprob(residual, termination);
  std::vector<double> shifted(weights.dims.d_model);
  return neuron_delta(lens, weights, residual, base, neuron, raw.activations[neuron.layer][neuron.index],
                      termination, shifted);
}

double layer_importance(const ModelWeights& weights, const AttributionSnapshot& snapshot,
                        std::uint32_t layer, TokenId termination) {
  const RawAttribution& raw = require_raw(snapshot);
  check_token(weights, termination);
  check_snapshot(weights, raw);
  if (layer >= weights.dims.layers) fail(ErrorKind::kCompatibility, "layer out of range");

  const auto& residual = raw.pre_ffn[layer];
  const auto& act = raw.activations[layer];
  const Matrix& fc2 = weights.layers[layer].fc2;
  std::vector<double> full(residual.begin(), residual.end());
  for (std::uint32_t i = 0; i < weights.dims.d_model; ++i) {
    double acc = 0.0;
    for (std::uint32_t k = 0; k < weights.dims.d_ff; ++k) acc += act[k] * double{fc2.at(i, k)};
    full[i] += acc;
  }
  LogitLens lens(weights);
  return lens.logprob(full, termination) - lens.logprob(residual, termination);
}

ImportanceTable importance_table(const ModelWeights& weights, const AttributionSnapshot& snapshot,
                                 TokenId termination, std::string sample_id) {
  const RawAttribution& raw = require_raw(snapshot);
  check_token(weights, termination);
  check_snapshot(weights, raw);

  ImportanceTable table;
  table.sample_id = std::move(sample_id);
  table.scores.reserve(weights.dims.total_neurons());
  LogitLens lens(weights);
  std::vector<double> shifted(weights.dims.d_model);
  for (std::uint32_t l = 0; l < weights.dims.layers; ++l) {
    const auto& residual = raw.pre_ffn[l];
    const double base = lens.logprob(residual, termination);
    for (std::uint32_t k = 0; k < weights.dims.d_ff; ++k) {
      const NeuronId id{l, k};
      table.scores.push_back(
          {id, neuron_delta(lens, weights, residual, base, id, raw.activations[l][k], termination, shifted)});
    }
  }
  return table;
}

ImportanceTable importance_table(const AttributionSnapshot& snapshot, std::string sample_id) {
  if (snapshot.has_raw()) {
    fail(ErrorKind::kPath, "snapshot carries raw residuals; score it against the model weights");
  }
  ImportanceTable table;
  table.sample_id = std::move(sample_id);
  table.scores = snapshot.scores();
  std::sort(table.scores.begin(), table.scores.end(),
            [](const NeuronScore& a, const NeuronScore& b) { return a.neuron < b.neuron; });
  return table;
}

CandidateList rank_candidates(const ImportanceTable& table, std::size_t k) {
  if (k == 0) fail(ErrorKind::kInvalidArgument, "k must be >= 1");
  CandidateList list;
  list.sample_id = table.sample_id;
  for (const auto& s : table.scores) {
    if (s.score > 0.0) list.candidates.push_back(s);
  }
  auto better = [](const NeuronScore& a, const NeuronScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.neuron < b.neuron;
  };
  if (list.candidates.size() > k) {
    std::partial_sort(list.candidates.begin(), list.candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      list.candidates.end(), better);
    list.candidates.resize(k);
  } else {
    std::sort(list.candidates.begin(), list.candidates.end(), better);
  }
  return list;
}

CandidateList rank_candidates(const ModelWeights& weights, const AttributionSnapshot& snapshot,
                              TokenId termination, std::size_t k, std::string sample_id) {
  if (k == 0) fail(ErrorKind::kInvalidArgument, "k must be >= 1");
  return rank_candidates(importance_table(weights, snapshot, termination, std::move(sample_id)), k);
}

void write_importance_table(const ImportanceTable& table, std::ostream& out) {
  out << "# neatimp 1 sample=" << table.sample_id << '\n';
  for (const auto& s : table.scores) {
    out << s.neuron.layer << ' ' << s.neuron.index << ' ' << text::format_double(s.score) << '\n';
  }
}

}  // namespace neat
