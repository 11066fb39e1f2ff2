// Command-line front end. Talks to the library only through neat.h.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "neat/neat.h"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kEmptySelection = 3, kIncompatible = 4 };

struct Failure {
  int code;
  std::string message;
};

int code_for(neat_status s) {
  switch (s) {
    case NEAT_OK: return kOk;
    case NEAT_ERR_COMPATIBILITY:
    case NEAT_ERR_DIMENSION: return kIncompatible;
    case NEAT_ERR_INTERNAL: return kFailure;
    default: return kUsage;
  }
}

void check(neat_status s) {
  if (s != NEAT_OK) throw Failure{code_for(s), std::string(neat_status_name(s)) + " error: " + neat_last_error()};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Model = std::unique_ptr<neat_model_t, Deleter<neat_model_t, neat_model_free>>;
using Config = std::unique_ptr<neat_config_t, Deleter<neat_config_t, neat_config_free>>;
using ExitSet = std::unique_ptr<neat_exit_set_t, Deleter<neat_exit_set_t, neat_exit_set_free>>;
using Generation = std::unique_ptr<neat_generation_t, Deleter<neat_generation_t, neat_generation_free>>;
using Calibration = std::unique_ptr<neat_calibration_t, Deleter<neat_calibration_t, neat_calibration_free>>;
using Replay = std::unique_ptr<neat_replay_t, Deleter<neat_replay_t, neat_replay_free>>;
using CString = std::unique_ptr<char, Deleter<char, neat_free_string>>;

std::string take(char* s) {
  CString owned(s);
  return owned ? std::string(owned.get()) : std::string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{kUsage, "cannot write " + path};
  out << content;
}

std::vector<std::uint32_t> parse_tokens(const std::string& line) {
  std::vector<std::uint32_t> tokens;
  std::istringstream in(line);
  std::string field;
  while (in >> field) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != field.size() || v > 0xFFFFFFFFUL) throw Failure{kUsage, "bad token id '" + field + "'"};
    tokens.push_back(static_cast<std::uint32_t>(v));
  }
  return tokens;
}

std::vector<std::vector<std::uint32_t>> read_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{kUsage, "cannot open prompts file " + path};
  std::vector<std::vector<std::uint32_t>> prompts;
  std::string line;
  while (std::getline(in, line)) {
    auto p = parse_tokens(line);
    if (!p.empty()) prompts.push_back(std::move(p));
  }
  if (prompts.empty()) throw Failure{kUsage, "prompts file " + path + " is empty"};
  return prompts;
}

std::string join(const uint32_t* tokens, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + std::to_string(tokens[i]);
  return s;
}

// Expands directories to their sorted files with `extension`.
std::vector<std::string> collect(const std::vector<std::string>& inputs, const std::string& extension) {
  std::vector<std::string> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.is_regular_file() && entry.path().extension() == extension) found.push_back(entry.path().string());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(in)) {
      files.push_back(in);
    } else {
      throw Failure{kUsage, "no such file or directory: " + in};
    }
  }
  if (files.empty()) throw Failure{kUsage, "no " + extension + " files found"};
  return files;
}

std::vector<const char*> c_paths(const std::vector<std::string>& files) {
  std::vector<const char*> out;
  for (const auto& f : files) out.push_back(f.c_str());
  return out;
}

// Options shared by every command that builds a pipeline config.
struct ConfigOptions {
  std::string path;
  std::optional<double> tau_sim, tau_sup, tau_mag, tau_com, tau_cons;
  std::optional<std::size_t> k;
  std::optional<std::uint32_t> stride, warmup, max_steps;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string sampling;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--tau-sim", tau_sim, "exit threshold on cosine alignment");
    cmd->add_option("--tau-sup", tau_sup, "suppression threshold on cosine alignment");
    cmd->add_option("--tau-mag", tau_mag, "magnitude-ratio threshold");
    cmd->add_option("--tau-com", tau_com, "minimum mean centre of mass");
    cmd->add_option("--tau-cons", tau_cons, "minimum consistency across samples");
    cmd->add_option("--k", k, "candidates kept per sample");
    cmd->add_option("--stride", stride, "evaluate every n-th step");
    cmd->add_option("--warmup", warmup, "steps before the controller may act");
    cmd->add_option("--max-steps", max_steps, "generation step budget");
    cmd->add_option("--seed", seed, "sampling seed");
    cmd->add_option("--mode", mode, "full, suppress-only or exit-only");
    cmd->add_option("--sampling", sampling, "greedy or categorical");
  }

  Config build(std::uint32_t vocab) const {
    neat_config_t* raw = nullptr;
    check(path.empty() ? neat_config_default(vocab, &raw) : neat_config_load(path.c_str(), &raw));
    Config c(raw);
    auto set = [&](const char* name, const auto& v) {
      if (v) check(neat_config_set(c.get(), name, static_cast<double>(*v)));
    };
    set("tau_sim", tau_sim);
    set("tau_sup", tau_sup);
    set("tau_mag", tau_mag);
    set("tau_com", tau_com);
    set("tau_cons", tau_cons);
    set("k", k);
    set("check_stride", stride);
    set("warmup_steps", warmup);
    set("max_steps", max_steps);
    set("seed", seed);
    if (!mode.empty()) check(neat_config_set_mode(c.get(), mode.c_str()));
    if (!sampling.empty()) check(neat_config_set_sampling(c.get(), sampling.c_str()));
    return c;
  }
};

Model load_model(const std::string& path) {
  neat_model_t* raw = nullptr;
  check(neat_model_load(path.c_str(), &raw));
  return Model(raw);
}

ExitSet load_set(const std::string& path) {
  neat_exit_set_t* raw = nullptr;
  check(neat_exit_set_load(path.c_str(), &raw));
  return ExitSet(raw);
}

std::uint32_t vocab_of(const neat_model_t* model) {
  neat_dims d{};
  check(neat_model_dims(model, &d));
  return d.vocab;
}

Generation generate(const neat_model_t* model, const neat_config_t* config, const std::vector<std::uint32_t>& prompt,
                    const neat_exit_set_t* set, bool record) {
  neat_generation_t* raw = nullptr;
  check(neat_generate(model, config, prompt.data(), prompt.size(), set, record ? 1 : 0, &raw));
  return Generation(raw);
}

// ---- commands ----

struct InitModelArgs {
  std::string out;
  bool planted = false;
  std::uint64_t seed = 7;
  neat_dims dims{4, 48, 64, 40, 4};
  std::string prompts_out;
  std::size_t prompt_count = 40;
  std::uint64_t prompt_seed = 11;
};

int cmd_init_model(const InitModelArgs& a) {
  neat_model_t* raw = nullptr;
  check(a.planted ? neat_model_init_planted(a.seed, &raw) : neat_model_init_random(&a.dims, a.seed, &raw));
  Model model(raw);
  check(neat_model_save(model.get(), a.out.c_str()));
  neat_dims d{};
  check(neat_model_dims(model.get(), &d));
  std::cout << "wrote " << a.out << " (L=" << d.layers << " d=" << d.d_model << " N=" << d.d_ff << " V=" << d.vocab
            << " heads=" << d.heads << (a.planted ? ", planted exit neuron" : "") << ")\n";
  if (!a.prompts_out.empty()) {
    char* text = nullptr;
    check(neat_model_prompts(model.get(), a.prompt_count, a.prompt_seed, &text));
    write_file(a.prompts_out, take(text));
    std::cout << "wrote " << a.prompt_count << " prompts to " << a.prompts_out << '\n';
  }
  return kOk;
}

struct RecordArgs {
  std::string model, prompts, out_dir;
  ConfigOptions config;
};

int cmd_record(const RecordArgs& a) {
  Model model = load_model(a.model);
  Config config = a.config.build(vocab_of(model.get()));
  const auto prompts = read_prompts(a.prompts);
  fs::create_directories(a.out_dir);
  std::size_t terminated = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "trace_%03zu", i);
    Generation gen = generate(model.get(), config.get(), prompts[i], nullptr, true);
    const std::string path = (fs::path(a.out_dir) / (std::string(name) + ".neatrace")).string();
    check(neat_generation_write_trace(gen.get(), path.c_str()));
    const std::string stop = neat_generation_stop_reason(gen.get());
    if (stop == "termination-token") ++terminated;
    std::cout << name << "  length " << neat_generation_length(gen.get()) << "  " << stop
              << (stop == "termination-token" ? "" : "  (no snapshot)") << '\n';
  }
  std::cout << "recorded " << prompts.size() << " traces, " << terminated << " terminated naturally\n";
  return kOk;
}

struct CalibrateArgs {
  std::vector<std::string> traces;
  std::string model, out, records;
  bool json = false;
  ConfigOptions config;
};

int cmd_calibrate(const CalibrateArgs& a) {
  const auto files = collect(a.traces, ".neatrace");
  Model model;
  std::uint32_t vocab = 40;
  if (!a.model.empty()) {
    model = load_model(a.model);
    vocab = vocab_of(model.get());
  }
  Config config = a.config.build(vocab);
  const auto paths = c_paths(files);
  neat_calibration_t* raw = nullptr;
  check(neat_calibrate(paths.data(), paths.size(), model.get(), config.get(), &raw));
  Calibration cal(raw);

  char* table = nullptr;
  char* records = nullptr;
  check(neat_calibration_render(cal.get(), NEAT_FORMAT_TABLE, &table));
  check(neat_calibration_render(cal.get(), NEAT_FORMAT_RECORDS, &records));
  const std::string records_text = take(records);
  std::cout << (a.json ? records_text : take(table));
  if (!a.records.empty()) write_file(a.records, records_text);

  const auto status = neat_calibration_result(cal.get());
  if (status == NEAT_CALIBRATION_EMPTY) {
    std::cerr << "neat: no exit neurons selected; no set written\n";
    return kEmptySelection;
  }
  neat_exit_set_t* set_raw = nullptr;
  check(neat_calibration_exit_set(cal.get(), &set_raw));
  ExitSet set(set_raw);
  check(neat_exit_set_save(set.get(), a.out.c_str()));
  if (status == NEAT_CALIBRATION_BELOW_FLOOR) {
    std::cerr << "neat: selection is below the configured minimum size; set written to " << a.out << '\n';
    return kEmptySelection;
  }
  return kOk;
}

struct RunArgs {
  std::string model, set, prompt, prompts, log_dir, trace_dir;
  bool no_controller = false;
  ConfigOptions config;
};

int cmd_run(const RunArgs& a) {
  if (a.prompt.empty() == a.prompts.empty()) throw Failure{kUsage, "give exactly one of --prompt or --prompts"};
  if (!a.no_controller && a.set.empty()) throw Failure{kUsage, "--set is required unless --no-controller is given"};
  Model model = load_model(a.model);
  Config config = a.config.build(vocab_of(model.get()));
  ExitSet set;
  if (!a.no_controller) {
    set = load_set(a.set);
    neat_dims model_dims{}, set_dims{};
    check(neat_model_dims(model.get(), &model_dims));
    check(neat_exit_set_dims(set.get(), &set_dims));
    if (std::memcmp(&model_dims, &set_dims, sizeof(neat_dims)) != 0) {
      throw Failure{kIncompatible, "exit-neuron set " + a.set + " was calibrated for a model of different shape"};
    }
  }

  std::vector<std::vector<std::uint32_t>> prompts;
  if (!a.prompt.empty()) {
    prompts.push_back(parse_tokens(a.prompt));
  } else {
    prompts = read_prompts(a.prompts);
  }
  if (!a.log_dir.empty()) fs::create_directories(a.log_dir);
  if (!a.trace_dir.empty()) fs::create_directories(a.trace_dir);

  for (std::size_t i = 0; i < prompts.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "run_%03zu", i);
    const auto& prompt = prompts[i];
    std::cout << name << "  prompt: " << join(prompt.data(), prompt.size()) << '\n';
    Generation vanilla = generate(model.get(), config.get(), prompt, nullptr, false);
    std::cout << "  vanilla    (" << neat_generation_stop_reason(vanilla.get()) << ", "
              << neat_generation_length(vanilla.get())
              << "): " << join(neat_generation_tokens(vanilla.get()), neat_generation_length(vanilla.get())) << '\n';
    if (a.no_controller) continue;

    Generation run = generate(model.get(), config.get(), prompt, set.get(), !a.trace_dir.empty());
    const auto length = neat_generation_length(run.get());
    std::cout << "  controlled (" << neat_generation_stop_reason(run.get()) << ", " << length
              << "): " << join(neat_generation_tokens(run.get()), length) << '\n';
    char* log = nullptr;
    check(neat_generation_decision_log(run.get(), name, static_cast<uint32_t>(neat_generation_length(vanilla.get())),
                                       &log));
    const std::string log_text = take(log);
    if (!a.log_dir.empty()) {
      write_file((fs::path(a.log_dir) / (std::string(name) + ".neatdec")).string(), log_text);
    } else {
      // Decisions inline, minus the header line.
      std::istringstream lines(log_text);
      std::string line;
      std::getline(lines, line);
      while (std::getline(lines, line)) std::cout << "    " << line << '\n';
    }
    if (!a.trace_dir.empty()) {
      const auto path = (fs::path(a.trace_dir) / (std::string(name) + ".neatrace")).string();
      check(neat_generation_write_trace(run.get(), path.c_str()));
    }
  }
  return kOk;
}

struct ReplayArgs {
  std::vector<std::string> traces;
  std::string set, records, log_dir;
  bool json = false;
  ConfigOptions config;
};

int cmd_replay(const ReplayArgs& a) {
  const auto files = collect(a.traces, ".neatrace");
  ExitSet set = load_set(a.set);
  neat_dims dims{};
  check(neat_exit_set_dims(set.get(), &dims));
  Config config = a.config.build(dims.vocab);
  const auto paths = c_paths(files);
  neat_replay_t* raw = nullptr;
  check(neat_replay(paths.data(), paths.size(), set.get(), config.get(), &raw));
  Replay replay(raw);

  char* table = nullptr;
  char* records = nullptr;
  check(neat_replay_render(replay.get(), NEAT_FORMAT_TABLE, &table));
  check(neat_replay_render(replay.get(), NEAT_FORMAT_RECORDS, &records));
  const std::string records_text = take(records);
  std::cout << (a.json ? records_text : take(table));
  if (!a.records.empty()) write_file(a.records, records_text);
  if (!a.log_dir.empty()) check(neat_replay_write_logs(replay.get(), a.log_dir.c_str()));
  if (neat_replay_skipped(replay.get()) > 0) {
    std::cerr << "neat: warning: " << neat_replay_skipped(replay.get()) << " trace(s) skipped for missing coverage\n";
  }
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> logs;
  std::string records;
  bool json = false;
};

int cmd_report(const ReportArgs& a) {
  const auto files = collect(a.logs, ".neatdec");
  const auto paths = c_paths(files);
  char* table = nullptr;
  char* records = nullptr;
  check(neat_report(paths.data(), paths.size(), NEAT_FORMAT_TABLE, &table));
  check(neat_report(paths.data(), paths.size(), NEAT_FORMAT_RECORDS, &records));
  const std::string records_text = take(records);
  std::cout << (a.json ? records_text : take(table));
  if (!a.records.empty()) write_file(a.records, records_text);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neat: activation-guided early exit for reasoning traces"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(neat_version()));

  InitModelArgs init;
  auto* init_cmd = app.add_subcommand("init-model", "write a random or planted toy model");
  init_cmd->add_option("--out", init.out, "model file to write")->required();
  init_cmd->add_flag("--planted", init.planted, "plant a known exit neuron");
  init_cmd->add_option("--seed", init.seed, "weight seed");
  init_cmd->add_option("--layers", init.dims.layers);
  init_cmd->add_option("--d-model", init.dims.d_model);
  init_cmd->add_option("--d-ff", init.dims.d_ff);
  init_cmd->add_option("--vocab", init.dims.vocab);
  init_cmd->add_option("--heads", init.dims.heads);
  init_cmd->add_option("--prompts-out", init.prompts_out, "also write prompts for this model");
  init_cmd->add_option("--prompt-count", init.prompt_count);
  init_cmd->add_option("--prompt-seed", init.prompt_seed);

  RecordArgs record;
  auto* record_cmd = app.add_subcommand("record", "generate and record activation traces");
  record_cmd->add_option("--model", record.model)->required()->check(CLI::ExistingFile);
  record_cmd->add_option("--prompts", record.prompts, "one prompt of token ids per line")->required();
  record_cmd->add_option("--out-dir", record.out_dir)->required();
  record.config.attach(record_cmd);

  CalibrateArgs calibrate;
  auto* cal_cmd = app.add_subcommand("calibrate", "select exit neurons from recorded traces");
  cal_cmd->add_option("traces", calibrate.traces, "trace files or directories")->required();
  cal_cmd->add_option("--model", calibrate.model, "model for scoring raw snapshots")->check(CLI::ExistingFile);
  cal_cmd->add_option("--out", calibrate.out, "exit-neuron set to write")->required();
  cal_cmd->add_option("--records", calibrate.records, "also write JSON-lines records here");
  cal_cmd->add_flag("--json", calibrate.json, "print records instead of the table");
  calibrate.config.attach(cal_cmd);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "generate with the exit controller attached");
  run_cmd->add_option("--model", run.model)->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--set", run.set, "exit-neuron set");
  run_cmd->add_option("--prompt", run.prompt, "space-separated token ids");
  run_cmd->add_option("--prompts", run.prompts, "prompts file")->check(CLI::ExistingFile);
  run_cmd->add_flag("--no-controller", run.no_controller, "vanilla generation only");
  run_cmd->add_option("--log-dir", run.log_dir, "write decision logs here");
  run_cmd->add_option("--trace-dir", run.trace_dir, "write controlled-run traces here");
  run.config.attach(run_cmd);

  ReplayArgs replay;
  auto* replay_cmd = app.add_subcommand("replay", "simulate the controller over recorded traces");
  replay_cmd->add_option("traces", replay.traces, "trace files or directories")->required();
  replay_cmd->add_option("--set", replay.set)->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--records", replay.records, "also write JSON-lines records here");
  replay_cmd->add_option("--log-dir", replay.log_dir, "write decision logs here");
  replay_cmd->add_flag("--json", replay.json, "print records instead of the table");
  replay.config.attach(replay_cmd);

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "summarize decision logs");
  report_cmd->add_option("logs", report.logs, "decision logs or directories");
  report_cmd->add_option("--records", report.records, "also write JSON-lines records here");
  report_cmd->add_flag("--json", report.json, "print records instead of the table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*init_cmd) return cmd_init_model(init);
    if (*record_cmd) return cmd_record(record);
    if (*cal_cmd) return cmd_calibrate(calibrate);
    if (*run_cmd) return cmd_run(run);
    if (*replay_cmd) return cmd_replay(replay);
    if (*report_cmd) {
      if (report.logs.empty()) throw Failure{kUsage, "report needs at least one decision log"};
      return cmd_report(report);
    }
  } catch (const Failure& f) {
    std::cerr << "neat: " << f.message << '\n';
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "neat: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
