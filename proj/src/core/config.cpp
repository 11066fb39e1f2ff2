#include "neat/core/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "neat/core/errors.hpp"
#include "neat/core/vocab.hpp"

namespace neat {
namespace {

using json = nlohmann::json;

template <typename T>
void read_key(const json& obj, const char* key, T& into) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::kInvalidArgument, std::string("config key '") + key + "' has the wrong type");
  }
}

const json& section(const json& root, const char* key) {
  static const json kEmpty = json::object();
  if (!root.contains(key)) return kEmpty;
  const json& s = root.at(key);
  if (!s.is_object()) fail(ErrorKind::kInvalidArgument, std::string("config section '") + key + "' must be an object");
  return s;
}

}  // namespace

PipelineConfig default_config(std::uint32_t vocab) {
  PipelineConfig c;
  c.controller.reflection_tokens = toy_vocab::reflection_tokens(vocab);
  c.controller.termination_token = toy_vocab::kTermination;
  c.generation.termination_token = toy_vocab::kTermination;
  return c;
}

PipelineConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) fail(ErrorKind::kFormat, "config must be a JSON object");

  PipelineConfig c = default_config();
  read_key(root, "calibration_set_size", c.calibration_set_size);

  const json& cal = section(root, "calibration");
  read_key(cal, "k", c.calibration.k);
  read_key(cal, "tau_cons", c.calibration.tau_cons);
  read_key(cal, "tau_com", c.calibration.tau_com);
  read_key(cal, "min_set_size", c.calibration.min_set_size);
  if (cal.contains("tau_ent")) {
    if (cal.at("tau_ent").is_null()) {
      c.calibration.tau_ent.reset();
    } else {
      double v = 0.0;
      read_key(cal, "tau_ent", v);
      c.calibration.tau_ent = v;
    }
  }

  const json& ctl = section(root, "controller");
  read_key(ctl, "tau_sim", c.controller.tau_sim);
  read_key(ctl, "tau_sup", c.controller.tau_sup);
  read_key(ctl, "tau_mag", c.controller.tau_mag);
  read_key(ctl, "reflection_tokens", c.controller.reflection_tokens);
  read_key(ctl, "termination_token", c.controller.termination_token);
  read_key(ctl, "check_stride", c.controller.check_stride);
  read_key(ctl, "warmup_steps", c.controller.warmup_steps);
  if (ctl.contains("mode")) {
    std::string mode;
    read_key(ctl, "mode", mode);
    const auto parsed = parse_intervention_mode(mode);
    if (!parsed) fail(ErrorKind::kInvalidArgument, "unknown controller mode '" + mode + "'");
    c.controller.mode = *parsed;
  }

  const json& gen = section(root, "generation");
  read_key(gen, "max_steps", c.generation.max_steps);
  read_key(gen, "seed", c.generation.seed);
  read_key(gen, "temperature", c.generation.temperature);
  if (gen.contains("sampling")) {
    std::string s;
    read_key(gen, "sampling", s);
    if (s == "greedy") {
      c.generation.sampling = Sampling::kGreedy;
    } else if (s == "categorical") {
      c.generation.sampling = Sampling::kCategorical;
    } else {
      fail(ErrorKind::kInvalidArgument, "unknown sampling '" + s + "'");
    }
  }
  // One termination token for the whole pipeline.
  c.generation.termination_token = c.controller.termination_token;

  validate_all(c);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::string to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["calibration_set_size"] = c.calibration_set_size;
  auto& cal = j["calibration"];
  cal["k"] = c.calibration.k;
  cal["tau_cons"] = c.calibration.tau_cons;
  cal["tau_com"] = c.calibration.tau_com;
  cal["tau_ent"] = c.calibration.tau_ent ? nlohmann::ordered_json(*c.calibration.tau_ent) : nlohmann::ordered_json(nullptr);
  cal["min_set_size"] = c.calibration.min_set_size;
  auto& ctl = j["controller"];
  ctl["tau_sim"] = c.controller.tau_sim;
  ctl["tau_sup"] = c.controller.tau_sup;
  ctl["tau_mag"] = c.controller.tau_mag;
  ctl["reflection_tokens"] = c.controller.reflection_tokens;
  ctl["termination_token"] = c.controller.termination_token;
  ctl["check_stride"] = c.controller.check_stride;
  ctl["warmup_steps"] = c.controller.warmup_steps;
  ctl["mode"] = std::string(to_string(c.controller.mode));
  auto& gen = j["generation"];
  gen["max_steps"] = c.generation.max_steps;
  gen["sampling"] = c.generation.sampling == Sampling::kGreedy ? "greedy" : "categorical";
  gen["seed"] = c.generation.seed;
  gen["temperature"] = c.generation.temperature;
  return j.dump(2) + "\n";
}

bool set_parameter(PipelineConfig& c, const std::string& name, double value) {
  auto count = [&](auto& field) {
    if (!(value >= 0.0) || value != std::floor(value)) {
      fail(ErrorKind::kInvalidArgument, name + " must be a non-negative integer");
    }
    field = static_cast<std::remove_reference_t<decltype(field)>>(value);
  };
  if (name == "tau_sim") {
    c.controller.tau_sim = value;
  } else if (name == "tau_sup") {
    c.controller.tau_sup = value;
  } else if (name == "tau_mag") {
    c.controller.tau_mag = value;
  } else if (name == "tau_com") {
    c.calibration.tau_com = value;
  } else if (name == "tau_cons") {
    c.calibration.tau_cons = value;
  } else if (name == "tau_ent") {
    c.calibration.tau_ent = value;
  } else if (name == "k") {
    count(c.calibration.k);
  } else if (name == "min_set_size") {
    count(c.calibration.min_set_size);
  } else if (name == "check_stride") {
    count(c.controller.check_stride);
  } else if (name == "warmup_steps") {
    count(c.controller.warmup_steps);
  } else if (name == "calibration_set_size") {
    count(c.calibration_set_size);
  } else if (name == "max_steps") {
    count(c.generation.max_steps);
  } else {
    return false;
  }
  return true;
}

void validate_all(const PipelineConfig& c) {
  if (c.calibration_set_size < 1) fail(ErrorKind::kInvalidArgument, "calibration_set_size must be >= 1");
  c.calibration.validate();
  c.controller.validate();
  if (c.generation.max_steps < 1) fail(ErrorKind::kInvalidArgument, "max_steps must be >= 1");
  if (!(c.generation.temperature > 0.0) || !std::isfinite(c.generation.temperature)) {
    fail(ErrorKind::kInvalidArgument, "temperature must be a finite value > 0");
  }
}

}  // namespace neat
