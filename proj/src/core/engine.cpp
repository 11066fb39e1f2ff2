#include "neat/core/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "neat/core/errors.hpp"

namespace neat {
namespace {

// Box-Muller over raw mt19937_64 output, so weights do not depend on the
// standard library's distribution implementations.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}

  float next(double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return static_cast<float>(spare_ * stddev);
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return static_cast<float>(radius * std::cos(angle) * stddev);
  }

 private:
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

void fill(Matrix& m, NormalSource& src, double stddev) {
  for (float& v : m.data) v = src.next(stddev);
}

// out = W * x for W rows x cols, accumulated in double.
void matvec(const Matrix& w, std::span<const float> x, std::span<float> out) {
  for (std::uint32_t r = 0; r < w.rows; ++r) {
    const float* row = w.data.data() + std::size_t{r} * w.cols;
    double acc = 0.0;
    for (std::uint32_t c = 0; c < w.cols; ++c) acc += double{row[c]} * double{x[c]};
    out[r] = static_cast<float>(acc);
  }
}

void rms_norm(std::span<const float> x, std::span<const float> gain, std::span<float> out) {
  double sq = 0.0;
  for (float v : x) sq += double{v} * double{v};
  const double inv = 1.0 / std::sqrt(sq / static_cast<double>(x.size()) + kNormEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(double{x[i]} * inv * double{gain[i]});
  }
}

}  // namespace

std::string_view to_string(Activation act) noexcept {
  switch (act) {
    case Activation::kSiLU: return "silu";
    case Activation::kGELU: return "gelu";
    case Activation::kReLU: return "relu";
  }
  return "silu";
}

std::optional<Activation> parse_activation(std::string_view name) noexcept {
  if (name == "silu" || name == "sigmoid-weighted-linear") return Activation::kSiLU;
  if (name == "gelu" || name == "gaussian-error-linear") return Activation::kGELU;
  if (name == "relu" || name == "rectified") return Activation::kReLU;
  return std::nullopt;
}

float apply_activation(Activation act, float x) noexcept {
  const double v = x;
  switch (act) {
    case Activation::kSiLU: return static_cast<float>(v / (1.0 + std::exp(-v)));
    case Activation::kGELU: return static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
    case Activation::kReLU: return x > 0.0f ? x : 0.0f;
  }
  return x;
}

std::string_view to_string(StopReason reason) noexcept {
  switch (reason) {
    case StopReason::kTerminationToken: return "termination-token";
    case StopReason::kControllerExit: return "controller-exit";
    case StopReason::kMaxSteps: return "max-steps";
  }
  return "max-steps";
}

ModelWeights init_random(const ModelDims& dims, std::uint64_t seed, Activation act) {
  validate(dims);
  NormalSource src(seed);
  const double base = 0.02;
  const double residual = 0.02 / std::sqrt(static_cast<double>(dims.layers));

  ModelWeights w;
  w.dims = dims;
  w.activation = act;
  w.token_embedding = Matrix(dims.vocab, dims.d_model);
  fill(w.token_embedding, src, base);
  w.position_embedding = Matrix(kMaxContext, dims.d_model);
  fill(w.position_embedding, src, base);
  w.layers.resize(dims.layers);
  for (auto& layer : w.layers) {
    layer.attn_norm.assign(dims.d_model, 1.0f);
    layer.wq = Matrix(dims.d_model, dims.d_model);
    layer.wk = Matrix(dims.d_model, dims.d_model);
    layer.wv = Matrix(dims.d_model, dims.d_model);
    layer.wo = Matrix(dims.d_model, dims.d_model);
    layer.fc1 = Matrix(dims.d_ff, dims.d_model);
    layer.fc2 = Matrix(dims.d_model, dims.d_ff);
    fill(layer.wq, src, base);
    fill(layer.wk, src, base);
    fill(layer.wv, src, base);
    fill(layer.wo, src, residual);
    fill(layer.fc1, src, base);
    fill(layer.fc2, src, residual);
  }
  w.final_norm.assign(dims.d_model, 1.0f);
  w.unembedding = Matrix(dims.vocab, dims.d_model);
  fill(w.unembedding, src, base);
  return w;
}

StepOutput forward_step(const ModelWeights& weights, std::span<const TokenId> context) {
  const ModelDims& dims = weights.dims;
  if (context.empty()) fail(ErrorKind::kInvalidArgument, "forward_step: empty context");
  if (context.size() > kMaxContext) {
    fail(ErrorKind::kInvalidArgument, "forward_step: context longer than " +
                                          std::to_string(kMaxContext) + " positions");
  }
  for (TokenId t : context) {
    if (t >= dims.vocab) {
      fail(ErrorKind::kVocabulary, "token id " + std::to_string(t) + " >= vocab " +
                                       std::to_string(dims.vocab));
    }
  }

  const std::size_t n = context.size();
  const std::uint32_t d = dims.d_model;
  const std::uint32_t head_dim = d / dims.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  // Residual stream for every position, row-major n x d.
  std::vector<float> x(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    auto tok = weights.token_embedding.row(context[p]);
    auto pos = weights.position_embedding.row(static_cast<std::uint32_t>(p));
    for (std::uint32_t i = 0; i < d; ++i) x[p * d + i] = tok[i] + pos[i];
  }

  StepOutput out;
  out.layers.resize(dims.layers);

  std::vector<float> normed(d), q(n * d), k(n * d), v(n * d), mixed(d), attn(d), pre(d), f(d);
  std::vector<float> act(dims.d_ff);
  std::vector<double> scores(n);

  for (std::uint32_t l = 0; l < dims.layers; ++l) {
    const LayerWeights& lw = weights.layers[l];
    for (std::size_t p = 0; p < n; ++p) {
      std::span<const float> row(x.data() + p * d, d);
      rms_norm(row, lw.attn_norm, normed);
      matvec(lw.wq, normed, std::span<float>(q.data() + p * d, d));
      matvec(lw.wk, normed, std::span<float>(k.data() + p * d, d));
      matvec(lw.wv, normed, std::span<float>(v.data() + p * d, d));
    }

    std::vector<float> next(n * d);
    for (std::size_t p = 0; p < n; ++p) {
      // Causal multi-head attention for position p.
      for (std::uint32_t h = 0; h < dims.heads; ++h) {
        const std::uint32_t off = h * head_dim;
        double max_score = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s <= p; ++s) {
          double dot = 0.0;
          for (std::uint32_t i = 0; i < head_dim; ++i) {
            dot += double{q[p * d + off + i]} * double{k[s * d + off + i]};
          }
          scores[s] = dot * scale;
          max_score = std::max(max_score, scores[s]);
        }
        double total = 0.0;
        for (std::size_t s = 0; s <= p; ++s) {
          scores[s] = std::exp(scores[s] - max_score);
          total += scores[s];
        }
        for (std::uint32_t i = 0; i < head_dim; ++i) {
          double acc = 0.0;
          for (std::size_t s = 0; s <= p; ++s) acc += scores[s] * double{v[s * d + off + i]};
          mixed[off + i] = static_cast<float>(acc / total);
        }
      }
      matvec(lw.wo, mixed, attn);

      for (std::uint32_t i = 0; i < d; ++i) pre[i] = x[p * d + i] + attn[i];
      matvec(lw.fc1, pre, act);
      for (float& a : act) a = apply_activation(weights.activation, a);
      matvec(lw.fc2, act, f);
      for (std::uint32_t i = 0; i < d; ++i) next[p * d + i] = pre[i] + f[i];

      if (p + 1 == n) {
        LayerCapture& cap = out.layers[l];
        cap.residual_in.assign(x.begin() + static_cast<std::ptrdiff_t>(p * d),
                               x.begin() + static_cast<std::ptrdiff_t>((p + 1) * d));
        cap.attn_out = attn;
        cap.pre_ffn = pre;
        cap.activations = act;
        cap.ffn_out = f;
        cap.residual_out.assign(next.begin() + static_cast<std::ptrdiff_t>(p * d),
                                next.begin() + static_cast<std::ptrdiff_t>((p + 1) * d));
      }
    }
    x = std::move(next);
  }

  std::span<const float> last(x.data() + (n - 1) * d, d);
  rms_norm(last, weights.final_norm, normed);
  out.logits.resize(dims.vocab);
  matvec(weights.unembedding, normed, out.logits);
  return out;
}

std::vector<double> log_softmax(std::span<const float> logits) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (float v : logits) max_logit = std::max(max_logit, double{v});
  double total = 0.0;
  for (float v : logits) total += std::exp(double{v} - max_logit);
  const double log_total = max_logit + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = double{logits[i]} - log_total;
  return out;
}

// ---------------------------------------------------------------------------

TokenSampler::TokenSampler(std::uint64_t seed) : rng_(seed) {}

TokenId TokenSampler::greedy(std::span<const float> logits) const {
  const auto it = std::max_element(logits.begin(), logits.end());
  return static_cast<TokenId>(std::distance(logits.begin(), it));
}

TokenId TokenSampler::categorical(std::span<const float> logits, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::kInvalidArgument, "temperature must be > 0");
  double max_logit = -std::numeric_limits<double>::infinity();
  for (float v : logits) max_logit = std::max(max_logit, double{v});
  std::vector<double> cumulative(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    total += std::exp((double{logits[i]} - max_logit) / temperature);
    cumulative[i] = total;
  }
  const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53 * total;
  for (std::size_t i = 0; i < cumulative.size(); ++i) {
    if (u < cumulative[i]) return static_cast<TokenId>(i);
  }
  // u rounded up to the total: take the last token with non-zero mass.
  for (std::size_t i = cumulative.size(); i-- > 0;) {
    if (i == 0 || cumulative[i] > cumulative[i - 1]) return static_cast<TokenId>(i);
  }
  return 0;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<TokenLogprob> top_logprobs(std::span<const float> logits, std::size_t m) {
  const auto lp = log_softmax(logits);
  std::vector<TokenId> order(lp.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  const std::size_t keep = std::min(m, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](TokenId a, TokenId b) { return lp[a] > lp[b] || (lp[a] == lp[b] && a < b); });
  std::vector<TokenLogprob> top;
  for (std::size_t i = 0; i < keep; ++i) top.push_back({order[i], lp[order[i]]});
  return top;
}

std::vector<double> flatten_activations(const StepOutput& out) {
  std::vector<double> flat;
  for (const auto& layer : out.layers) flat.insert(flat.end(), layer.activations.begin(), layer.activations.end());
  return flat;
}

}  // namespace

GenerationResult generate(const ModelWeights& weights, std::span<const TokenId> prompt,
                          const GenerationConfig& config, StepController* controller) {
  const ModelDims& dims = weights.dims;
  if (prompt.empty()) fail(ErrorKind::kInvalidArgument, "generate: empty prompt");
  if (config.max_steps == 0) fail(ErrorKind::kInvalidArgument, "generate: max_steps must be >= 1");
  if (prompt.size() + config.max_steps - 1 > kMaxContext) {
    fail(ErrorKind::kInvalidArgument, "generate: prompt plus max_steps exceeds the " +
                                          std::to_string(kMaxContext) + "-position context");
  }
  if (config.termination_token >= dims.vocab) {
    fail(ErrorKind::kVocabulary, "termination token " + std::to_string(config.termination_token) +
                                     " >= vocab " + std::to_string(dims.vocab));
  }
  if (controller != nullptr) controller->check_compatible(dims);

  GenerationResult result;
  result.prompt.assign(prompt.begin(), prompt.end());
  if (config.record_trace) {
    ActivationTrace trace;
    trace.header.dims = dims;
    trace.header.termination_token = config.termination_token;
    trace.header.prompt = result.prompt;
    trace.header.mode = ActivationMode::kFull;
    trace.header.source = TraceSource::kEngine;
    result.trace = std::move(trace);
  }

  TokenSampler sampler(config.seed);
  std::vector<TokenId> context(prompt.begin(), prompt.end());

  for (std::uint32_t t = 1; t <= config.max_steps; ++t) {
    StepOutput out = forward_step(weights, context);
    std::vector<float> logits = out.logits;

    bool exit_now = false;
    if (controller != nullptr) {
      Decision decision = controller->on_step(t, out, logits);
      exit_now = decision.kind == DecisionKind::kExit;
      result.decisions.push_back(std::move(decision));
    }

    TokenId token = config.termination_token;
    if (!exit_now) {
      token = config.sampling == Sampling::kGreedy ? sampler.greedy(logits)
                                                   : sampler.categorical(logits, config.temperature);
    }
    result.tokens.push_back(token);

    if (result.trace) {
      result.trace->steps.push_back(
          TraceStep{t, token, flatten_activations(out), top_logprobs(out.logits, 5)});
    }

    if (exit_now) {
      result.stop = StopReason::kControllerExit;
      break;
    }
    if (token == config.termination_token) {
      result.stop = StopReason::kTerminationToken;
      if (result.trace) {
        RawAttribution raw;
        for (const auto& layer : out.layers) {
          raw.pre_ffn.emplace_back(layer.pre_ffn.begin(), layer.pre_ffn.end());
          raw.activations.emplace_back(layer.activations.begin(), layer.activations.end());
        }
        result.trace->snapshot = AttributionSnapshot{t, std::move(raw)};
      }
      break;
    }
    context.push_back(token);
  }
  return result;
}

}  // namespace neat
