#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "neat/core/errors.hpp"
#include "neat/core/model_io.hpp"
#include "neat/core/planted.hpp"
#include "neat/core/vocab.hpp"
#include "support.hpp"

using namespace neat;

namespace {

double max_abs(std::span<const float> v) {
  double m = 0.0;
  for (float x : v) m = std::max(m, std::abs(double{x}));
  return m;
}

std::vector<TokenId> random_prompt(std::mt19937_64& rng, std::uint32_t vocab) {
  std::uniform_int_distribution<std::uint32_t> len(1, 6);
  std::uniform_int_distribution<TokenId> tok(0, vocab - 1);
  std::vector<TokenId> p(len(rng));
  for (auto& t : p) t = tok(rng);
  return p;
}

}  // namespace

TEST_CASE("ffn output equals the sum of neuron subvalues") {
  const ModelDims dims{4, 32, 48, 40, 4};
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto w = init_random(dims, seed);
    const auto prompt = random_prompt(rng, dims.vocab);
    const StepOutput out = forward_step(w, prompt);
    REQUIRE(out.layers.size() == dims.layers);
    for (std::uint32_t l = 0; l < dims.layers; ++l) {
      const auto& cap = out.layers[l];
      const double bound = 1e-5 * (1.0 + max_abs(cap.ffn_out));
      for (std::uint32_t i = 0; i < dims.d_model; ++i) {
        double sum = 0.0;
        for (std::uint32_t k = 0; k < dims.d_ff; ++k) sum += double{cap.activations[k]} * w.layers[l].fc2.at(i, k);
        CHECK(std::abs(sum - cap.ffn_out[i]) <= bound);
        // Residual bookkeeping: h = h_prev + A + F.
        const double h = double{cap.residual_in[i]} + cap.attn_out[i] + cap.ffn_out[i];
        CHECK(std::abs(h - cap.residual_out[i]) <= 1e-5 * (1.0 + std::abs(h)));
        CHECK(std::abs(double{cap.pre_ffn[i]} - (double{cap.residual_in[i]} + cap.attn_out[i])) <= 1e-6);
      }
    }
  }
}

TEST_CASE("zero fc1 gives activations sigma(0) for every activation function") {
  const ModelDims dims{2, 16, 24, 12, 2};
  for (Activation act : {Activation::kSiLU, Activation::kGELU, Activation::kReLU}) {
    auto w = init_random(dims, 5, act);
    for (auto& layer : w.layers) std::fill(layer.fc1.data.begin(), layer.fc1.data.end(), 0.0f);
    const StepOutput out = forward_step(w, std::vector<TokenId>{1, 2, 3});
    for (const auto& cap : out.layers) {
      for (float c : cap.activations) CHECK(c == apply_activation(act, 0.0f));
      for (float f : cap.ffn_out) CHECK(f == 0.0f);
    }
  }
}

TEST_CASE("activation functions at reference points") {
  CHECK(apply_activation(Activation::kReLU, -2.0f) == 0.0f);
  CHECK(apply_activation(Activation::kReLU, 1.5f) == 1.5f);
  CHECK(apply_activation(Activation::kSiLU, 1.0f) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-6));
  CHECK(apply_activation(Activation::kGELU, 1.0f) == doctest::Approx(0.8413447).epsilon(1e-4));
  CHECK(parse_activation("silu") == Activation::kSiLU);
  CHECK_FALSE(parse_activation("tanh").has_value());
}

TEST_CASE("log_softmax normalises and tolerates -inf") {
  std::vector<float> logits{1.0f, 2.0f, -std::numeric_limits<float>::infinity(), 0.5f};
  const auto lp = log_softmax(logits);
  double total = 0.0;
  for (double v : lp) total += std::exp(v);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isinf(lp[2]));
  CHECK(lp[2] < 0);
}

TEST_CASE("generation is deterministic for a fixed seed") {
  const auto w = init_random(ModelDims{2, 16, 24, 20, 2}, 9);
  GenerationConfig cfg;
  cfg.sampling = Sampling::kCategorical;
  cfg.seed = 1234;
  cfg.max_steps = 30;
  cfg.record_trace = true;
  const std::vector<TokenId> prompt{11, 12};
  const auto a = generate(w, prompt, cfg);
  const auto b = generate(w, prompt, cfg);
  CHECK(a.tokens == b.tokens);
  CHECK(*a.trace == *b.trace);
  cfg.seed = 1235;
  const auto c = generate(w, prompt, cfg);
  CHECK(a.tokens != c.tokens);
}

TEST_CASE("greedy generation stops on the termination token or the budget") {
  const auto& f = testing::planted_fixture();
  for (const auto& s : f.calibration) {
    CHECK(s.trace.terminated());
    REQUIRE(s.trace.snapshot.has_value());
    CHECK(s.trace.snapshot->step == s.trace.length());
  }
  const auto w = init_random(ModelDims{2, 16, 24, 20, 2}, 9);
  GenerationConfig cfg;
  cfg.max_steps = 7;
  cfg.termination_token = 19;
  const auto r = generate(w, std::vector<TokenId>{3}, cfg);
  CHECK(r.tokens.size() <= 7);
  if (r.stop == StopReason::kMaxSteps) CHECK(r.tokens.size() == 7);
}

TEST_CASE("planted model follows its chain and terminates after the ramp") {
  const auto pm = build_planted_model(PlantedModelSpec{});
  GenerationConfig cfg;
  const std::vector<TokenId> prompt{pm.reasoning[0]};
  const auto r = generate(pm.weights, prompt, cfg);
  REQUIRE(r.stop == StopReason::kTerminationToken);
  // Walks the reasoning chain, then the trigger, then part of the ramp.
  for (std::size_t i = 1; i < pm.reasoning.size(); ++i) CHECK(r.tokens[i - 1] == pm.reasoning[i]);
  CHECK(r.tokens[pm.reasoning.size() - 1] == pm.trigger);
  CHECK(r.tokens.size() > pm.reasoning.size() + 1);
  CHECK(r.tokens.size() <= pm.reasoning.size() + pm.ramp.size() + 1);
  // The planted neuron grows along the ramp.
  const auto traj = extract_trajectory(generate(pm.weights, prompt, {.record_trace = true}).trace.value(), pm.neuron);
  const std::size_t first_ramp = pm.reasoning.size();
  for (std::size_t t = first_ramp + 1; t < traj.size(); ++t) CHECK(traj[t] > traj[t - 1]);
}

TEST_CASE("planted model checks that the chain fits") {
  PlantedModelSpec spec;
  spec.reasoning_length = 30;
  CHECK_THROWS_AS(build_planted_model(spec), Error);
  spec = PlantedModelSpec{};
  spec.neuron = {9, 0};
  CHECK_THROWS_AS(build_planted_model(spec), Error);
}

TEST_CASE("generation input validation") {
  const auto w = init_random(ModelDims{2, 16, 24, 20, 2}, 1);
  GenerationConfig cfg;
  CHECK_THROWS_AS(generate(w, std::vector<TokenId>{}, cfg), Error);
  cfg.termination_token = 20;
  CHECK_THROWS_AS(generate(w, std::vector<TokenId>{1}, cfg), Error);
  cfg = GenerationConfig{};
  cfg.max_steps = kMaxContext;
  CHECK_THROWS_AS(generate(w, std::vector<TokenId>{1, 2}, cfg), Error);
  CHECK_THROWS_AS(forward_step(w, std::vector<TokenId>{25}), Error);
}

TEST_CASE("dims validation") {
  CHECK_NOTHROW(validate(ModelDims{4, 48, 64, 40, 4}));
  CHECK_THROWS_AS(validate(ModelDims{0, 48, 64, 40, 4}), Error);
  CHECK_THROWS_AS(validate(ModelDims{4, 48, 64, 40, 5}), Error);
  CHECK_THROWS_AS(validate(ModelDims{4, 48, 32, 40, 4}), Error);
  try {
    validate(ModelDims{4, 48, 64, 40, 5});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDimension);
  }
}

TEST_CASE("model files round-trip bit for bit") {
  const auto dir = testing::scratch_dir("model_io");
  const auto w = init_random(ModelDims{2, 16, 24, 20, 2}, 77);
  const auto path = dir / "m.neatm";
  save_model(w, path);
  CHECK(std::filesystem::file_size(path) == model_file_size(w.dims));
  const auto back = load_model(path);
  CHECK(back.dims == w.dims);
  CHECK(back.token_embedding.data == w.token_embedding.data);
  CHECK(back.layers[1].fc2.data == w.layers[1].fc2.data);
  CHECK(back.unembedding.data == w.unembedding.data);

  // Truncated and corrupted files are rejected.
  std::filesystem::resize_file(path, model_file_size(w.dims) - 4);
  CHECK_THROWS_AS(load_model(path), Error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTNEAT";
  }
  try {
    load_model(path);
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
}

TEST_CASE("categorical sampling never draws a -inf token") {
  TokenSampler sampler(42);
  std::vector<float> logits(12, 0.0f);
  logits[3] = -std::numeric_limits<float>::infinity();
  logits[7] = -std::numeric_limits<float>::infinity();
  for (int i = 0; i < 2000; ++i) {
    const TokenId t = sampler.categorical(logits, 1.0);
    CHECK(t != 3);
    CHECK(t != 7);
  }
}

TEST_CASE("toy vocabulary layout") {
  const auto refl = toy_vocab::reflection_tokens(40);
  REQUIRE(refl.size() == 10);
  CHECK(refl.front() == 1);
  CHECK(refl.back() == 10);
  CHECK(toy_vocab::token_text(0) == "</think>");
  CHECK(toy_vocab::token_text(1) == "Wait");
  CHECK(toy_vocab::token_text(2) == " Wait");
  CHECK(toy_vocab::token_text(10) == " However");
}
