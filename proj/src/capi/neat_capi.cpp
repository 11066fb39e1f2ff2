#include "neat/neat.h"

#include <exception>
#include <filesystem>
#include <future>
#include <new>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "neat/core/calibration.hpp"
#include "neat/core/config.hpp"
#include "neat/core/errors.hpp"
#include "neat/core/model_io.hpp"
#include "neat/core/planted.hpp"
#include "neat/core/replay.hpp"
#include "neat/core/vocab.hpp"

struct neat_model {
  neat::ModelWeights weights;
  std::optional<neat::PlantedModel> planted;
};

struct neat_config {
  neat::PipelineConfig config;
};

struct neat_exit_set {
  neat::ExitNeuronSet set;
};

struct neat_generation {
  neat::GenerationResult result;
};

struct neat_calibration {
  neat::CalibrationResult result;
};

struct neat_replay {
  neat::ReplayReport report;
};

namespace {

thread_local std::string g_last_error;

neat_status status_of(neat::ErrorKind kind) {
  using neat::ErrorKind;
  switch (kind) {
    case ErrorKind::kDimension: return NEAT_ERR_DIMENSION;
    case ErrorKind::kVocabulary: return NEAT_ERR_VOCABULARY;
    case ErrorKind::kFormat: return NEAT_ERR_FORMAT;
    case ErrorKind::kValidation: return NEAT_ERR_VALIDATION;
    case ErrorKind::kCoverage: return NEAT_ERR_COVERAGE;
    case ErrorKind::kCompatibility: return NEAT_ERR_COMPATIBILITY;
    case ErrorKind::kPath: return NEAT_ERR_PATH;
    case ErrorKind::kCalibrationInput: return NEAT_ERR_CALIBRATION_INPUT;
    case ErrorKind::kNoSignal: return NEAT_ERR_NO_SIGNAL;
    case ErrorKind::kIo: return NEAT_ERR_IO;
    case ErrorKind::kInvalidArgument: return NEAT_ERR_INVALID_ARGUMENT;
  }
  return NEAT_ERR_INTERNAL;
}

// Runs `fn`, translating exceptions into a status plus thread-local message.
template <typename Fn>
neat_status guarded(Fn&& fn) {
  try {
    fn();
    return NEAT_OK;
  } catch (const neat::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return NEAT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NEAT_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) neat::fail(neat::ErrorKind::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* to_c_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  s.copy(out, s.size());
  out[s.size()] = '\0';
  return out;
}

neat_dims to_c(const neat::ModelDims& d) { return {d.layers, d.d_model, d.d_ff, d.vocab, d.heads}; }

std::vector<std::string> paths_of(const char* const* paths, std::size_t count) {
  if (count > 0) require(paths, "path list");
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    require(paths[i], "path");
    out.emplace_back(paths[i]);
  }
  return out;
}

// Parses every file concurrently; results (and the first error) keep input order.
std::vector<neat::ActivationTrace> read_traces(const std::vector<std::string>& paths) {
  std::vector<std::future<neat::ActivationTrace>> jobs;
  jobs.reserve(paths.size());
  for (const auto& p : paths) {
    jobs.push_back(std::async(std::launch::async, [p] { return neat::read_trace(std::filesystem::path(p)); }));
  }
  std::vector<neat::ActivationTrace> traces;
  traces.reserve(paths.size());
  std::exception_ptr first;
  for (auto& job : jobs) {
    try {
      traces.push_back(job.get());
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
  return traces;
}

std::string stem_of(const std::string& path) { return std::filesystem::path(path).stem().string(); }

}  // namespace

extern "C" {

const char* neat_last_error(void) { return g_last_error.c_str(); }

const char* neat_status_name(neat_status status) {
  switch (status) {
    case NEAT_OK: return "ok";
    case NEAT_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case NEAT_ERR_DIMENSION: return "dimension";
    case NEAT_ERR_VOCABULARY: return "vocabulary";
    case NEAT_ERR_FORMAT: return "format";
    case NEAT_ERR_VALIDATION: return "validation";
    case NEAT_ERR_COVERAGE: return "coverage";
    case NEAT_ERR_COMPATIBILITY: return "compatibility";
    case NEAT_ERR_PATH: return "path";
    case NEAT_ERR_CALIBRATION_INPUT: return "calibration-input";
    case NEAT_ERR_NO_SIGNAL: return "no-signal";
    case NEAT_ERR_IO: return "io";
    case NEAT_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void neat_free_string(char* s) { delete[] s; }

const char* neat_version(void) { return "1.0.0"; }

neat_status neat_config_default(uint32_t vocab, neat_config_t** out) {
  return guarded([&] {
    require(out, "out");
    *out = new neat_config{neat::default_config(vocab)};
  });
}

neat_status neat_config_load(const char* path, neat_config_t** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new neat_config{neat::load_config(path)};
  });
}

neat_status neat_config_clone(const neat_config_t* config, neat_config_t** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = new neat_config{config->config};
  });
}

neat_status neat_config_set(neat_config_t* config, const char* name, double value) {
  return guarded([&] {
    require(config, "config");
    require(name, "name");
    const std::string key(name);
    neat::PipelineConfig next = config->config;
    if (key == "seed") {
      if (!(value >= 0.0)) neat::fail(neat::ErrorKind::kInvalidArgument, "seed must be >= 0");
      next.generation.seed = static_cast<std::uint64_t>(value);
    } else if (key == "temperature") {
      if (!(value > 0.0)) neat::fail(neat::ErrorKind::kInvalidArgument, "temperature must be > 0");
      next.generation.temperature = value;
    } else if (!neat::set_parameter(next, key, value)) {
      neat::fail(neat::ErrorKind::kInvalidArgument, "unknown parameter '" + key + "'");
    }
    // Pairwise threshold constraints are checked where the values are used,
    // so a flag may briefly order tau_sup above tau_sim.
    config->config = next;
  });
}

neat_status neat_config_get(const neat_config_t* config, const char* name, double* out) {
  return guarded([&] {
    require(config, "config");
    require(name, "name");
    require(out, "out");
    const auto& c = config->config;
    const std::string key(name);
    if (key == "tau_sim") *out = c.controller.tau_sim;
    else if (key == "tau_sup") *out = c.controller.tau_sup;
    else if (key == "tau_mag") *out = c.controller.tau_mag;
    else if (key == "tau_com") *out = c.calibration.tau_com;
    else if (key == "tau_cons") *out = c.calibration.tau_cons;
    else if (key == "tau_ent") *out = c.calibration.tau_ent.value_or(-1.0);
    else if (key == "k") *out = static_cast<double>(c.calibration.k);
    else if (key == "min_set_size") *out = static_cast<double>(c.calibration.min_set_size);
    else if (key == "check_stride") *out = c.controller.check_stride;
    else if (key == "warmup_steps") *out = c.controller.warmup_steps;
    else if (key == "calibration_set_size") *out = static_cast<double>(c.calibration_set_size);
    else if (key == "max_steps") *out = c.generation.max_steps;
    else if (key == "seed") *out = static_cast<double>(c.generation.seed);
    else if (key == "temperature") *out = c.generation.temperature;
    else neat::fail(neat::ErrorKind::kInvalidArgument, "unknown parameter '" + key + "'");
  });
}

neat_status neat_config_set_mode(neat_config_t* config, const char* mode) {
  return guarded([&] {
    require(config, "config");
    require(mode, "mode");
    const auto parsed = neat::parse_intervention_mode(mode);
    if (!parsed) neat::fail(neat::ErrorKind::kInvalidArgument, std::string("unknown mode '") + mode + "'");
    config->config.controller.mode = *parsed;
  });
}

neat_status neat_config_set_sampling(neat_config_t* config, const char* sampling) {
  return guarded([&] {
    require(config, "config");
    require(sampling, "sampling");
    const std::string s(sampling);
    if (s == "greedy") {
      config->config.generation.sampling = neat::Sampling::kGreedy;
    } else if (s == "categorical") {
      config->config.generation.sampling = neat::Sampling::kCategorical;
    } else {
      neat::fail(neat::ErrorKind::kInvalidArgument, "unknown sampling '" + s + "'");
    }
  });
}

neat_status neat_config_to_json(const neat_config_t* config, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = to_c_string(neat::to_json(config->config));
  });
}

void neat_config_free(neat_config_t* config) { delete config; }

neat_status neat_model_init_random(const neat_dims* dims, uint64_t seed, neat_model_t** out) {
  return guarded([&] {
    require(dims, "dims");
    require(out, "out");
    const neat::ModelDims d{dims->layers, dims->d_model, dims->d_ff, dims->vocab, dims->heads};
    *out = new neat_model{neat::init_random(d, seed), std::nullopt};
  });
}

neat_status neat_model_init_planted(uint64_t seed, neat_model_t** out) {
  return guarded([&] {
    require(out, "out");
    neat::PlantedModelSpec spec;
    spec.seed = seed;
    neat::PlantedModel planted = neat::build_planted_model(spec);
    neat::ModelWeights weights = planted.weights;
    *out = new neat_model{std::move(weights), std::move(planted)};
  });
}

neat_status neat_model_load(const char* path, neat_model_t** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new neat_model{neat::load_model(path), std::nullopt};
  });
}

neat_status neat_model_save(const neat_model_t* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    neat::save_model(model->weights, path);
  });
}

neat_status neat_model_dims(const neat_model_t* model, neat_dims* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = to_c(model->weights.dims);
  });
}

neat_status neat_model_prompts(const neat_model_t* model, size_t count, uint64_t seed, char** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    std::vector<std::vector<neat::TokenId>> prompts;
    if (model->planted) {
      prompts = neat::planted_prompts(*model->planted, count, seed);
    } else {
      const std::uint32_t vocab = model->weights.dims.vocab;
      if (vocab <= neat::toy_vocab::kFirstContent) {
        neat::fail(neat::ErrorKind::kVocabulary, "vocabulary has no content tokens");
      }
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::uint32_t> length(2, 5);
      std::uniform_int_distribution<neat::TokenId> token(neat::toy_vocab::kFirstContent, vocab - 1);
      for (std::size_t i = 0; i < count; ++i) {
        std::vector<neat::TokenId> p(length(rng));
        for (auto& t : p) t = token(rng);
        prompts.push_back(std::move(p));
      }
    }
    std::string text;
    for (const auto& p : prompts) {
      for (std::size_t i = 0; i < p.size(); ++i) text += (i ? " " : "") + std::to_string(p[i]);
      text += '\n';
    }
    *out = to_c_string(text);
  });
}

void neat_model_free(neat_model_t* model) { delete model; }

neat_status neat_exit_set_load(const char* path, neat_exit_set_t** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new neat_exit_set{neat::read_exit_set(std::filesystem::path(path))};
  });
}

neat_status neat_exit_set_save(const neat_exit_set_t* set, const char* path) {
  return guarded([&] {
    require(set, "set");
    require(path, "path");
    neat::write_exit_set(set->set, std::filesystem::path(path));
  });
}

size_t neat_exit_set_size(const neat_exit_set_t* set) { return set ? set->set.neurons.size() : 0; }

neat_status neat_exit_set_dims(const neat_exit_set_t* set, neat_dims* out) {
  return guarded([&] {
    require(set, "set");
    require(out, "out");
    *out = to_c(set->set.dims);
  });
}

void neat_exit_set_free(neat_exit_set_t* set) { delete set; }

neat_status neat_generate(const neat_model_t* model, const neat_config_t* config, const uint32_t* prompt,
                          size_t prompt_length, const neat_exit_set_t* set, int record_trace,
                          neat_generation_t** out) {
  return guarded([&] {
    require(model, "model");
    require(config, "config");
    neat::validate_all(config->config);
    require(out, "out");
    if (prompt_length > 0) require(prompt, "prompt");
    neat::GenerationConfig gen = config->config.generation;
    gen.record_trace = record_trace != 0;
    const std::span<const neat::TokenId> tokens(prompt, prompt_length);
    auto* result = new neat_generation{};
    try {
      if (set != nullptr) {
        neat::ExitController controller(set->set, config->config.controller);
        result->result = neat::generate(model->weights, tokens, gen, &controller);
      } else {
        result->result = neat::generate(model->weights, tokens, gen);
      }
    } catch (...) {
      delete result;
      throw;
    }
    *out = result;
  });
}

size_t neat_generation_length(const neat_generation_t* gen) { return gen ? gen->result.tokens.size() : 0; }

const uint32_t* neat_generation_tokens(const neat_generation_t* gen) {
  return gen ? gen->result.tokens.data() : nullptr;
}

const char* neat_generation_stop_reason(const neat_generation_t* gen) {
  return gen ? neat::to_string(gen->result.stop).data() : "";
}

neat_status neat_generation_write_trace(const neat_generation_t* gen, const char* path) {
  return guarded([&] {
    require(gen, "generation");
    require(path, "path");
    if (!gen->result.trace) {
      neat::fail(neat::ErrorKind::kInvalidArgument, "generation was run without trace recording");
    }
    neat::write_trace(*gen->result.trace, std::filesystem::path(path));
  });
}

neat_status neat_generation_decision_log(const neat_generation_t* gen, const char* name,
                                         uint32_t reference_length, char** out) {
  return guarded([&] {
    require(gen, "generation");
    require(name, "name");
    require(out, "out");
    neat::DecisionLog log;
    log.name = name;
    if (reference_length > 0) log.reference_length = reference_length;
    log.decisions = gen->result.decisions;
    std::ostringstream buf;
    neat::write_decision_log(log, buf);
    *out = to_c_string(buf.str());
  });
}

void neat_generation_free(neat_generation_t* gen) { delete gen; }

neat_status neat_calibrate(const char* const* trace_paths, size_t count, const neat_model_t* model,
                           const neat_config_t* config, neat_calibration_t** out) {
  return guarded([&] {
    require(config, "config");
    neat::validate_all(config->config);
    require(out, "out");
    const auto paths = paths_of(trace_paths, count);
    if (paths.empty()) neat::fail(neat::ErrorKind::kCalibrationInput, "no calibration traces given");
    auto traces = read_traces(paths);
    std::vector<neat::CalibrationSample> samples;
    samples.reserve(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) samples.push_back({stem_of(paths[i]), std::move(traces[i])});
    auto result = neat::calibrate(samples, model ? &model->weights : nullptr, config->config.calibration);
    *out = new neat_calibration{std::move(result)};
  });
}

neat_calibration_status neat_calibration_result(const neat_calibration_t* cal) {
  if (cal == nullptr) return NEAT_CALIBRATION_EMPTY;
  return static_cast<neat_calibration_status>(cal->result.status);
}

neat_status neat_calibration_render(const neat_calibration_t* cal, neat_format format, char** out) {
  return guarded([&] {
    require(cal, "calibration");
    require(out, "out");
    std::ostringstream buf;
    if (format == NEAT_FORMAT_RECORDS) {
      neat::write_calibration_records(cal->result, buf);
    } else {
      neat::write_calibration_table(cal->result, buf);
    }
    *out = to_c_string(buf.str());
  });
}

neat_status neat_calibration_exit_set(const neat_calibration_t* cal, neat_exit_set_t** out) {
  return guarded([&] {
    require(cal, "calibration");
    require(out, "out");
    if (cal->result.set.neurons.empty()) neat::fail(neat::ErrorKind::kNoSignal, "no exit neurons were selected");
    *out = new neat_exit_set{cal->result.set};
  });
}

void neat_calibration_free(neat_calibration_t* cal) { delete cal; }

neat_status neat_replay(const char* const* trace_paths, size_t count, const neat_exit_set_t* set,
                        const neat_config_t* config, neat_replay_t** out) {
  return guarded([&] {
    require(set, "set");
    require(config, "config");
    neat::validate_all(config->config);
    require(out, "out");
    const auto paths = paths_of(trace_paths, count);
    if (paths.empty()) neat::fail(neat::ErrorKind::kInvalidArgument, "no traces to replay");
    auto traces = read_traces(paths);
    std::vector<neat::NamedTrace> named;
    named.reserve(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) named.push_back({stem_of(paths[i]), std::move(traces[i])});
    auto report = neat::replay(named, set->set, config->config.controller);
    *out = new neat_replay_t{std::move(report)};
  });
}

neat_status neat_replay_render(const neat_replay_t* replay, neat_format format, char** out) {
  return guarded([&] {
    require(replay, "replay");
    require(out, "out");
    std::ostringstream buf;
    if (format == NEAT_FORMAT_RECORDS) {
      neat::write_replay_records(replay->report, buf);
    } else {
      neat::write_replay_table(replay->report, buf);
    }
    *out = to_c_string(buf.str());
  });
}

double neat_replay_mean_length_reduction(const neat_replay_t* replay) {
  return replay ? replay->report.mean_length_reduction : 0.0;
}

size_t neat_replay_skipped(const neat_replay_t* replay) { return replay ? replay->report.skipped.size() : 0; }

uint32_t neat_replay_counterfactual_suppressions(const neat_replay_t* replay) {
  return replay ? replay->report.total_counterfactual_suppressions : 0;
}

neat_status neat_replay_write_logs(const neat_replay_t* replay, const char* directory) {
  return guarded([&] {
    require(replay, "replay");
    require(directory, "directory");
    const std::filesystem::path dir(directory);
    std::filesystem::create_directories(dir);
    for (const auto& r : replay->report.traces) neat::write_decision_log(r.log, dir / (r.name + ".neatdec"));
  });
}

void neat_replay_free(neat_replay_t* replay) { delete replay; }

neat_status neat_report(const char* const* log_paths, size_t count, neat_format format, char** out) {
  return guarded([&] {
    require(out, "out");
    const auto paths = paths_of(log_paths, count);
    if (paths.empty()) neat::fail(neat::ErrorKind::kInvalidArgument, "no decision logs given");
    std::vector<neat::DecisionLog> logs;
    logs.reserve(paths.size());
    for (const auto& p : paths) logs.push_back(neat::read_decision_log(std::filesystem::path(p)));
    const auto summary = neat::summarize_logs(logs);
    std::ostringstream buf;
    if (format == NEAT_FORMAT_RECORDS) {
      neat::write_summary_records(summary, buf);
    } else {
      neat::write_summary_table(summary, buf);
    }
    *out = to_c_string(buf.str());
  });
}

}  // extern "C"
