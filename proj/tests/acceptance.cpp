// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
// Criterion 8 drives the real `neat` executable twice in separate scratch
// directories and compares every byte it wrote.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "neat/core/attribution.hpp"
#include "neat/core/calibration.hpp"
#include "neat/core/controller.hpp"
#include "neat/core/replay.hpp"
#include "neat/core/temporal.hpp"
#include "neat/core/vocab.hpp"
#include "support.hpp"

#ifndef NEAT_CLI_PATH
#define NEAT_CLI_PATH "neat"
#endif

using namespace neat;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& why) {
    if (!ok && pass) {
      pass = false;
      detail = why;
    }
  }
};

struct Criterion {
  int number;
  const char* name;
  double budget_seconds;  // 0 means no wall-clock limit
  std::function<Outcome()> body;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. decomposition

class DecompositionProbe final : public StepController {
 public:
  explicit DecompositionProbe(const ModelWeights& w) : w_(w) {}

  void check_compatible(const ModelDims&) const override {}

  Decision on_step(std::uint32_t step, const StepOutput& out, std::span<float>) override {
    for (std::uint32_t l = 0; l < out.layers.size(); ++l) {
      const auto& cap = out.layers[l];
      double norm = 0.0;
      for (float f : cap.ffn_out) norm = std::max(norm, std::abs(double{f}));
      double err = 0.0;
      for (std::uint32_t i = 0; i < w_.dims.d_model; ++i) {
        double sum = 0.0;
        for (std::uint32_t k = 0; k < w_.dims.d_ff; ++k) sum += double{cap.activations[k]} * w_.layers[l].fc2.at(i, k);
        err = std::max(err, std::abs(sum - cap.ffn_out[i]));
      }
      worst_ratio = std::max(worst_ratio, err / (1e-5 * (1.0 + norm)));
      ++checks;
    }
    return Decision{step, DecisionKind::kContinue, std::nullopt};
  }

  double worst_ratio = 0.0;
  std::size_t checks = 0;

 private:
  const ModelWeights& w_;
};

Outcome decomposition() {
  Outcome o;
  const ModelDims dims{4, 32, 48, 40, 4};
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::uint32_t> len(1, 6);
  std::uniform_int_distribution<TokenId> tok(0, dims.vocab - 1);
  GenerationConfig gen;
  gen.max_steps = 12;
  gen.sampling = Sampling::kCategorical;
  double worst = 0.0;
  std::size_t checks = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto w = init_random(dims, seed);
    std::vector<TokenId> prompt(len(rng));
    for (auto& t : prompt) t = tok(rng);
    gen.seed = seed;
    DecompositionProbe probe(w);
    generate(w, prompt, gen, &probe);
    worst = std::max(worst, probe.worst_ratio);
    checks += probe.checks;
  }
  o.require(worst <= 1.0, fmt("error reached %.3g of the bound", worst));
  o.detail = o.pass ? std::to_string(checks) + " layer-steps, worst error " + fmt("%.3g of bound", worst) : o.detail;
  return o;
}

// ---------------------------------------------------------------------------
// 2. zero case and sign

long double two_pass_logprob(const ModelWeights& w, const std::vector<long double>& r, TokenId token) {
  long double sq = 0.0L;
  for (long double v : r) sq += v * v;
  const long double inv = 1.0L / std::sqrt(sq / r.size() + static_cast<long double>(kNormEpsilon));
  std::vector<long double> logits(w.dims.vocab);
  long double m = -INFINITY;
  for (std::uint32_t v = 0; v < w.dims.vocab; ++v) {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < r.size(); ++i) acc += static_cast<long double>(w.unembedding.at(v, i)) * r[i] * inv * w.final_norm[i];
    logits[v] = acc;
    m = std::max(m, acc);
  }
  long double total = 0.0L;
  for (long double l : logits) total += std::exp(l - m);
  return logits[token] - m - std::log(total);
}

AttributionSnapshot snapshot_at(const ModelWeights& w, const std::vector<TokenId>& context) {
  const StepOutput out = forward_step(w, context);
  RawAttribution raw;
  for (const auto& layer : out.layers) {
    raw.pre_ffn.emplace_back(layer.pre_ffn.begin(), layer.pre_ffn.end());
    raw.activations.emplace_back(layer.activations.begin(), layer.activations.end());
  }
  return AttributionSnapshot{static_cast<std::uint32_t>(context.size()), std::move(raw)};
}

Outcome zero_and_sign() {
  Outcome o;
  // Zero activation at the termination step: forced on the planted neuron.
  const auto& f = testing::planted_fixture();
  for (const auto& s : f.calibration) {
    AttributionSnapshot snap = *s.trace.snapshot;
    auto raw = snap.raw();
    raw.activations[f.model.neuron.layer][f.model.neuron.index] = 0.0;
    snap.data = raw;
    const double imp = neuron_importance(f.model.weights, snap, f.model.neuron, f.model.termination);
    o.require(imp == 0.0 && !std::signbit(imp), "zeroed neuron on " + s.id + " scored " + fmt("%.17g", imp));
  }
  // And naturally dead ReLU units.
  const auto relu = init_random(ModelDims{2, 16, 24, 20, 2}, 4, Activation::kReLU);
  const auto dead = snapshot_at(relu, {5, 6, 7, 8});
  std::size_t zeros = 0;
  for (std::uint32_t l = 0; l < 2; ++l) {
    for (std::uint32_t k = 0; k < 24; ++k) {
      if (dead.raw().activations[l][k] != 0.0) continue;
      ++zeros;
      o.require(neuron_importance(relu, dead, {l, k}, 0) == 0.0, "dead ReLU unit scored nonzero");
    }
  }
  o.require(zeros > 0, "no dead ReLU units to check");

  // Planted +alpha / -alpha against a separate two-pass evaluation.
  for (float alpha : {0.5f, 1.0f, 2.0f, 4.0f}) {
    for (float sign : {1.0f, -1.0f}) {
      PlantedModelSpec spec;
      spec.write_gain = sign * alpha;
      const auto pm = build_planted_model(spec);
      const std::vector<TokenId> context{pm.reasoning.back(), pm.trigger, pm.ramp[0], pm.ramp[1], pm.ramp[2]};
      const auto snap = snapshot_at(pm.weights, context);
      const auto& raw = snap.raw();
      const auto& pre = raw.pre_ffn[pm.neuron.layer];
      const long double c = raw.activations[pm.neuron.layer][pm.neuron.index];
      std::vector<long double> without(pre.begin(), pre.end());
      std::vector<long double> with = without;
      for (std::size_t i = 0; i < with.size(); ++i) with[i] += c * pm.weights.layers[pm.neuron.layer].fc2.at(i, pm.neuron.index);
      const long double oracle = two_pass_logprob(pm.weights, with, pm.termination) -
                                 two_pass_logprob(pm.weights, without, pm.termination);
      const double imp = neuron_importance(pm.weights, snap, pm.neuron, pm.termination);
      o.require(c > 0.0L, "planted neuron inactive");
      o.require(oracle != 0.0L && (imp > 0) == (oracle > 0) && (imp > 0) == (sign > 0),
                fmt("sign mismatch at alpha %.2f", sign * alpha));
    }
  }
  if (o.pass) o.detail = std::to_string(f.calibration.size() + zeros) + " zero cases, 8 signed plants";
  return o;
}

// ---------------------------------------------------------------------------
// 3. temporal analytic values and scale invariance

Outcome temporal() {
  Outcome o;
  auto near = [](std::optional<double> v, double want) { return v && std::abs(*v - want) <= 1e-9; };
  o.require(near(center_of_mass(std::vector<double>{0, 0, 1}), 1.0), "CoM of [0,0,1]");
  o.require(near(center_of_mass(std::vector<double>{1, 1, 1}), 2.0 / 3.0), "CoM of uniform T=3");
  o.require(near(activation_entropy(std::vector<double>{0, 0, 4, 0}), 0.0), "entropy of one-hot");
  o.require(near(activation_entropy(std::vector<double>{1, 1, 1, 1}), std::log(4.0)), "entropy of uniform T=4");

  // Dyadic trajectories keep lambda * c and every partial L1 sum exact, so
  // equality is the right test rather than a tolerance.
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> len(1, 40);
  std::uniform_int_distribution<int> mantissa(-2048, 2048);
  std::uniform_int_distribution<int> exponent(-10, 6);
  std::size_t compared = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> c(len(rng));
    for (double& v : c) v = std::ldexp(static_cast<double>(mantissa(rng)), exponent(rng));
    const auto com = center_of_mass(c);
    const auto ent = activation_entropy(c);
    for (double lambda : {-3.0, 0.5, 10.0}) {
      std::vector<double> scaled(c);
      for (double& v : scaled) v *= lambda;
      const auto com2 = center_of_mass(scaled);
      const auto ent2 = activation_entropy(scaled);
      o.require(com.has_value() == com2.has_value(), "degeneracy changed under scaling");
      if (!com || !com2) continue;
      o.require(*com == *com2 && *ent == *ent2, fmt("scaling by %.1f moved a metric", lambda));
      ++compared;
    }
  }
  if (o.pass) o.detail = "4 analytic points, " + std::to_string(compared) + " scaled comparisons";
  return o;
}

// ---------------------------------------------------------------------------
// 4. selection monotonicity

Outcome monotonicity() {
  Outcome o;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> count(1, 60);
  std::uniform_int_distribution<std::uint32_t> appear(1, 20);
  for (int i = 0; i < 200; ++i) {
    AggregateStats stats;
    stats.sample_count = 20;
    const std::uint32_t n = count(rng);
    for (std::uint32_t k = 0; k < n; ++k) {
      NeuronAggregate a;
      a.neuron = {k % 3, k};
      a.appearances = appear(rng);
      a.omega = a.appearances / 20.0;
      a.trajectory_samples = unit(rng) < 0.1 ? 0 : a.appearances;
      a.mean_com = unit(rng);
      a.mean_entropy = 3.0 * unit(rng);
      stats.neurons.push_back(a);
    }
    std::sort(stats.neurons.begin(), stats.neurons.end(),
              [](const NeuronAggregate& x, const NeuronAggregate& y) { return x.neuron < y.neuron; });
    CalibrationConfig lo;
    lo.tau_cons = unit(rng);
    lo.tau_com = unit(rng);
    CalibrationConfig hi = lo;
    hi.tau_cons += unit(rng) * (1.0 - lo.tau_cons);
    hi.tau_com += unit(rng) * (1.0 - lo.tau_com);
    const auto a = select_exit_neurons(stats, lo).neurons;
    const auto b = select_exit_neurons(stats, hi).neurons;
    o.require(std::includes(a.begin(), a.end(), b.begin(), b.end()), "tighter thresholds added a neuron");
  }
  AggregateStats edge;
  edge.sample_count = 5;
  NeuronAggregate n;
  n.neuron = {1, 2};
  n.appearances = 3;
  n.omega = 0.6;
  n.trajectory_samples = 3;
  n.mean_com = 0.6;
  edge.neurons = {n};
  CalibrationConfig at_boundary;
  at_boundary.tau_cons = 0.6;
  at_boundary.tau_com = 0.6;
  o.require(select_exit_neurons(edge, at_boundary).neurons.size() == 1, "boundary neuron rejected");
  if (o.pass) o.detail = "200 random stats, boundary (0.6, 0.6) selected";
  return o;
}

// ---------------------------------------------------------------------------
// 5. decision grid

DecisionKind three_case(double rho, double phi, double sim, double sup, double mag) {
  if (phi > mag && rho > sim) return DecisionKind::kExit;
  if (phi > mag && rho > sup && rho <= sim) return DecisionKind::kSuppress;
  return DecisionKind::kContinue;
}

Outcome decision_grid() {
  Outcome o;
  const auto cfg = default_config().controller;
  std::size_t disagreements = 0, cells = 0;
  for (int i = 0; i <= 2000; ++i) {
    const double rho = -1.0 + i * 1e-3;
    for (int j = 0; j <= 3000; ++j) {
      const double phi = j * 1e-3;
      ++cells;
      if (decide({rho, phi, 0}, cfg) != three_case(rho, phi, cfg.tau_sim, cfg.tau_sup, cfg.tau_mag)) ++disagreements;
    }
  }
  o.require(disagreements == 0, std::to_string(disagreements) + " disagreements");
  o.require(decide({0.68, 1.0, 0}, cfg) == DecisionKind::kExit, "(0.68, 1.0) is not Exit");
  o.require(decide({0.48, 1.0, 0}, cfg) == DecisionKind::kSuppress, "(0.48, 1.0) is not Suppress");
  if (o.pass) o.detail = std::to_string(cells) + " cells, 0 disagreements";
  return o;
}

// ---------------------------------------------------------------------------
// 6. suppression soundness

Outcome suppression() {
  Outcome o;
  const auto& f = testing::planted_fixture();
  const auto refl = f.config.controller.reflection_tokens;
  o.require(!refl.empty(), "no reflection tokens configured");
  std::size_t contexts = 0, draws = 0, hits = 0;
  TokenSampler sampler(2025);
  for (const auto& prompt : f.held_out_prompts) {
    auto out = forward_step(f.model.weights, prompt);
    // Push reflection tokens to the top first so the check is not vacuous.
    for (TokenId id : refl) out.logits[id] = 50.0f;
    apply_suppression(out.logits, refl);
    const auto lp = log_softmax(out.logits);
    for (TokenId id : refl) o.require(std::exp(lp[id]) == 0.0, "reflection token kept probability");
    ++contexts;
    for (int i = 0; i < 500; ++i) {
      const TokenId t = sampler.categorical(out.logits, 1.0);
      ++draws;
      if (std::find(refl.begin(), refl.end(), t) != refl.end()) ++hits;
    }
  }
  o.require(draws == 10000, "expected 10^4 draws");
  o.require(hits == 0, std::to_string(hits) + " reflection tokens drawn");
  if (o.pass) o.detail = std::to_string(contexts) + " contexts, " + std::to_string(draws) + " draws, 0 reflections";
  return o;
}

// ---------------------------------------------------------------------------
// 7. planted end to end

Outcome planted_end_to_end() {
  Outcome o;
  const auto f = testing::build_planted_fixture();
  const auto result = calibrate(f.calibration, &f.model.weights, f.config.calibration);
  const auto& ns = result.set.neurons;
  o.require(std::find(ns.begin(), ns.end(), f.model.neuron) != ns.end(), "planted neuron not selected");
  const auto* agg = result.stats.find(f.model.neuron);
  o.require(agg && agg->omega == 1.0, "planted neuron consistency below 1");
  if (!o.pass) return o;

  std::size_t earlier = 0, prefix = 0;
  for (std::size_t i = 0; i < f.held_out_prompts.size(); ++i) {
    const auto vanilla = generate(f.model.weights, f.held_out_prompts[i], f.config.generation);
    ExitController ctl(result.set, f.config.controller);
    const auto controlled = generate(f.model.weights, f.held_out_prompts[i], f.config.generation, &ctl);
    if (controlled.tokens.size() < vanilla.tokens.size()) ++earlier;
    const auto& c = controlled.tokens;
    const bool ok = !c.empty() && c.back() == f.model.termination && c.size() <= vanilla.tokens.size() &&
                    std::equal(c.begin(), c.end() - 1, vanilla.tokens.begin());
    if (ok) ++prefix;
  }
  const double n = static_cast<double>(f.held_out_prompts.size());
  const auto report = replay(f.held_out, result.set, f.config.controller);
  o.require(earlier >= 0.9 * n, std::to_string(earlier) + "/20 stopped earlier");
  o.require(prefix == f.held_out_prompts.size(), std::to_string(prefix) + "/20 prefix streams");
  o.require(report.mean_length_reduction > 0.10, fmt("mean replay LR %.4f", report.mean_length_reduction));
  if (o.pass) {
    o.detail = std::to_string(ns.size()) + " neurons selected, " + std::to_string(earlier) + "/20 earlier, " +
               std::to_string(prefix) + "/20 prefix, " + fmt("replay LR %.4f", report.mean_length_reduction);
  }
  return o;
}

// ---------------------------------------------------------------------------
// 8. determinism of the command-line tool

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int sh(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" NEAT_CLI_PATH "' " + args;
  return std::system(cmd.c_str());
}

// Runs the whole pipeline in `dir`; returns an empty string on success.
std::string pipeline(const fs::path& dir) {
  if (sh(dir, "init-model --planted --out model.neatmodel --prompts-out prompts.txt > init.out") != 0) {
    return "init-model failed";
  }
  std::ifstream in(dir / "prompts.txt");
  std::ofstream cal(dir / "cal.txt"), held(dir / "held.txt");
  std::string line;
  for (int i = 0; std::getline(in, line); ++i) (i < 20 ? cal : held) << line << '\n';
  cal.close();
  held.close();
  const std::vector<std::pair<std::string, std::string>> steps{
      {"record", "record --model model.neatmodel --prompts cal.txt --out-dir cal > record_cal.out"},
      {"record", "record --model model.neatmodel --prompts held.txt --out-dir held > record_held.out"},
      {"calibrate", "calibrate cal --model model.neatmodel --out set.neatset --records calibrate.jsonl > calibrate.out"},
      {"run", "run --model model.neatmodel --set set.neatset --prompts held.txt --log-dir runlogs > run.out"},
      {"replay", "replay held --set set.neatset --records replay.jsonl --log-dir replaylogs > replay.out"},
      {"report", "report runlogs --records report.jsonl > report.out"},
  };
  for (const auto& [name, args] : steps) {
    if (sh(dir, args) != 0) return name + " failed";
  }
  return {};
}

Outcome determinism() {
  Outcome o;
  const fs::path a = testing::scratch_dir("accept_a");
  const fs::path b = testing::scratch_dir("accept_b");
  for (const auto& dir : {a, b}) {
    const std::string err = pipeline(dir);
    o.require(err.empty(), err);
    if (!o.pass) return o;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  }
  std::sort(files.begin(), files.end());
  std::size_t compared = 0;
  for (const auto& rel : files) {
    o.require(fs::exists(b / rel), rel.string() + " missing in second run");
    o.require(slurp(a / rel) == slurp(b / rel), rel.string() + " differs between runs");
    ++compared;
  }
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
  o.require(count_b == files.size(), "second run wrote a different file set");
  o.require(slurp(a / "report.out").find("0.") != std::string::npos, "report output empty");
  if (o.pass) o.detail = std::to_string(compared) + " files byte-identical across two executions";
  return o;
}

// ---------------------------------------------------------------------------
// 9. threshold sweep and suppress-only ablation

Outcome threshold_sweep() {
  Outcome o;
  const auto& f = testing::planted_fixture();
  const auto result = calibrate(f.calibration, &f.model.weights, f.config.calibration);
  std::string curve;
  double previous = -1.0;
  for (double sim : {0.8, 0.7, 0.6, 0.5, 0.4}) {
    ControllerConfig cfg = f.config.controller;
    cfg.tau_sim = sim;
    // Exits ignore tau_sup in full mode; it only has to stay below tau_sim.
    cfg.tau_sup = std::min(cfg.tau_sup, 0.3);
    const double lr = replay(f.held_out, result.set, cfg).mean_length_reduction;
    o.require(lr >= previous, fmt("LR fell at tau_sim %.1f", sim));
    previous = lr;
    curve += fmt(" %.4f", lr);
  }
  ControllerConfig only = f.config.controller;
  only.mode = InterventionMode::kSuppressOnly;
  const auto ablated = replay(f.held_out, result.set, only);
  std::uint64_t suppressions = 0;
  for (const auto& t : ablated.traces) suppressions += t.counterfactual_suppressions;
  o.require(ablated.mean_length_reduction == 0.0, "suppress-only mode shortened a trace");
  o.require(suppressions > 0, "suppress-only mode recorded no suppressions");
  if (o.pass) o.detail = "LR" + curve + "; suppress-only LR 0 with " + std::to_string(suppressions) + " suppressions";
  return o;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "decomposition", 10.0, decomposition},
      {2, "zero case and sign", 5.0, zero_and_sign},
      {3, "temporal analytic values", 0.0, temporal},
      {4, "selection monotonicity", 0.0, monotonicity},
      {5, "decision grid", 30.0, decision_grid},
      {6, "suppression soundness", 0.0, suppression},
      {7, "planted end-to-end", 120.0, planted_end_to_end},
      {8, "determinism", 0.0, determinism},
      {9, "threshold sweep", 0.0, threshold_sweep},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && c.budget_seconds > 0.0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail = fmt("took longer than %.0f s", c.budget_seconds);
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d: %s (%.2fs) %s\n", o.pass ? "PASS" : "FAIL", c.number, c.name, secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
