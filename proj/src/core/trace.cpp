#include "neat/core/trace.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <span>

#include <json.hpp>

namespace neat {
namespace {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;

constexpr std::string_view kMagicPrefix = R"({"neat_trace":)";

std::string_view mode_name(ActivationMode m) { return m == ActivationMode::kFull ? "full" : "subset"; }
std::string_view source_name(TraceSource s) { return s == TraceSource::kEngine ? "engine" : "recorder"; }

[[noreturn]] void violation(TraceViolation v, std::size_t line, const std::string& what,
                            ErrorKind kind = ErrorKind::kValidation) {
  throw TraceError(kind, v, line, what);
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// Line numbers follow the file layout: header on 1, step i on i + 2,
// snapshot after the last step.
void validate_header(const TraceHeader& h) {
  constexpr std::size_t line = 1;
  if (h.version != kTraceFormatVersion) {
    violation(TraceViolation::kUnsupportedVersion, line,
              "unsupported version " + std::to_string(h.version), ErrorKind::kFormat);
  }
  try {
    validate(h.dims);
  } catch (const Error& e) {
    violation(TraceViolation::kInvalidDims, line, e.what());
  }
  if (h.termination_token >= h.dims.vocab) {
    violation(TraceViolation::kTokenOutOfRange, line,
              "termination token " + std::to_string(h.termination_token) + " >= vocab");
  }
  for (TokenId t : h.prompt) {
    if (t >= h.dims.vocab) {
      violation(TraceViolation::kTokenOutOfRange, line, "prompt token " + std::to_string(t) + " >= vocab");
    }
  }
  const bool subset_mode = h.mode == ActivationMode::kSubset;
  if (subset_mode == h.subset.empty()) {
    violation(TraceViolation::kSubsetMismatch, line,
              subset_mode ? "subset mode requires a non-empty subset list"
                          : "full mode must not carry a subset list");
  }
  std::set<NeuronId> seen;
  for (const NeuronId& id : h.subset) {
    if (!fits(id, h.dims)) {
      violation(TraceViolation::kNeuronOutOfRange, line, "subset neuron " + to_string(id) + " outside dims");
    }
    if (!seen.insert(id).second) {
      violation(TraceViolation::kDuplicateNeuron, line, "subset neuron " + to_string(id) + " listed twice");
    }
  }
}

void validate_step(const TraceHeader& h, const TraceStep& step, std::size_t index, bool last) {
  const std::size_t line = index + 2;
  if (step.t != index + 1) {
    violation(TraceViolation::kStepOrder, line,
              "expected step " + std::to_string(index + 1) + ", found " + std::to_string(step.t));
  }
  if (step.token >= h.dims.vocab) {
    violation(TraceViolation::kTokenOutOfRange, line, "token " + std::to_string(step.token) + " >= vocab");
  }
  if (!last && step.token == h.termination_token) {
    violation(TraceViolation::kEarlyTermination, line, "termination token emitted before the last step");
  }
  if (step.activations.size() != h.activation_width()) {
    violation(TraceViolation::kActivationWidth, line,
              "activation vector has " + std::to_string(step.activations.size()) + " values, expected " +
                  std::to_string(h.activation_width()));
  }
  if (!all_finite(step.activations)) violation(TraceViolation::kNonFinite, line, "non-finite activation");
  for (const auto& tl : step.top) {
    if (tl.token >= h.dims.vocab) {
      violation(TraceViolation::kTokenOutOfRange, line, "logits summary token " + std::to_string(tl.token) + " >= vocab");
    }
    if (!std::isfinite(tl.logprob)) violation(TraceViolation::kNonFinite, line, "non-finite logprob");
  }
}

void validate_snapshot(const ActivationTrace& trace) {
  const auto& snap = *trace.snapshot;
  const auto& h = trace.header;
  const std::size_t line = trace.steps.size() + 2;
  if (!trace.terminated()) {
    violation(TraceViolation::kSnapshotWithoutTermination, line,
              "attribution snapshot on a trace that did not end with the termination token");
  }
  if (snap.step != trace.length()) {
    violation(TraceViolation::kSnapshotStep, line,
              "snapshot step " + std::to_string(snap.step) + " is not the termination step " +
                  std::to_string(trace.length()));
  }
  if (snap.has_raw()) {
    const auto& raw = snap.raw();
    if (raw.pre_ffn.size() != h.dims.layers || raw.activations.size() != h.dims.layers) {
      violation(TraceViolation::kSnapshotShape, line, "snapshot must carry one pre_ffn and act row per layer");
    }
    for (std::uint32_t l = 0; l < h.dims.layers; ++l) {
      if (raw.pre_ffn[l].size() != h.dims.d_model || raw.activations[l].size() != h.dims.d_ff) {
        violation(TraceViolation::kSnapshotShape, line,
                  "snapshot layer " + std::to_string(l) + " has the wrong width");
      }
      if (!all_finite(raw.pre_ffn[l]) || !all_finite(raw.activations[l])) {
        violation(TraceViolation::kNonFinite, line, "non-finite snapshot value");
      }
    }
  } else {
    std::set<NeuronId> seen;
    for (const auto& s : snap.scores()) {
      if (!fits(s.neuron, h.dims)) {
        violation(TraceViolation::kNeuronOutOfRange, line, "scored neuron " + to_string(s.neuron) + " outside dims");
      }
      if (!seen.insert(s.neuron).second) {
        violation(TraceViolation::kDuplicateNeuron, line, "neuron " + to_string(s.neuron) + " scored twice");
      }
      if (!std::isfinite(s.score)) violation(TraceViolation::kNonFinite, line, "non-finite importance score");
    }
  }
}

// --- serialization ---------------------------------------------------------

ordered_json header_json(const TraceHeader& h) {
  ordered_json j;
  j["neat_trace"] = h.version;
  j["dims"] = {{"layers", h.dims.layers}, {"d_model", h.dims.d_model}, {"d_ff", h.dims.d_ff},
               {"vocab", h.dims.vocab}, {"heads", h.dims.heads}};
  j["termination_token"] = h.termination_token;
  j["prompt"] = h.prompt;
  j["mode"] = mode_name(h.mode);
  if (h.mode == ActivationMode::kSubset) {
    ordered_json list = ordered_json::array();
    for (const auto& id : h.subset) list.push_back({id.layer, id.index});
    j["subset"] = std::move(list);
  }
  j["source"] = source_name(h.source);
  return j;
}

ordered_json step_json(const TraceStep& s) {
  ordered_json j;
  j["t"] = s.t;
  j["token"] = s.token;
  j["act"] = s.activations;
  if (!s.top.empty()) {
    ordered_json top = ordered_json::array();
    for (const auto& tl : s.top) top.push_back({tl.token, tl.logprob});
    j["top"] = std::move(top);
  }
  return j;
}

ordered_json snapshot_json(const AttributionSnapshot& snap) {
  ordered_json body;
  body["step"] = snap.step;
  if (snap.has_raw()) {
    body["pre_ffn"] = snap.raw().pre_ffn;
    body["act"] = snap.raw().activations;
  } else {
    ordered_json scores = ordered_json::array();
    for (const auto& s : snap.scores()) scores.push_back({s.neuron.layer, s.neuron.index, s.score});
    body["scores"] = std::move(scores);
  }
  ordered_json j;
  j["snapshot"] = std::move(body);
  return j;
}

// --- parsing ---------------------------------------------------------------

NeuronId parse_neuron(const json& j) {
  if (!j.is_array() || j.size() < 2) throw json::type_error::create(302, "neuron must be [layer, index]", &j);
  return NeuronId{j.at(0).get<std::uint32_t>(), j.at(1).get<std::uint32_t>()};
}

TraceHeader parse_header(const std::string& line) {
  if (line.compare(0, kMagicPrefix.size(), kMagicPrefix) != 0) {
    violation(TraceViolation::kBadMagic, 1, "first line must begin with {\"neat_trace\":", ErrorKind::kFormat);
  }
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    violation(TraceViolation::kMalformedRecord, 1, std::string("unparsable header: ") + e.what());
  }
  TraceHeader h;
  try {
    if (!j.at("neat_trace").is_number_integer()) {
      violation(TraceViolation::kBadMagic, 1, "neat_trace must be an integer version", ErrorKind::kFormat);
    }
    h.version = j.at("neat_trace").get<int>();
    if (h.version != kTraceFormatVersion) {
      violation(TraceViolation::kUnsupportedVersion, 1, "unsupported version " + std::to_string(h.version),
                ErrorKind::kFormat);
    }
    const json& d = j.at("dims");
    h.dims = ModelDims{d.at("layers").get<std::uint32_t>(), d.at("d_model").get<std::uint32_t>(),
                       d.at("d_ff").get<std::uint32_t>(), d.at("vocab").get<std::uint32_t>(),
                       d.at("heads").get<std::uint32_t>()};
    h.termination_token = j.at("termination_token").get<TokenId>();
    h.prompt = j.at("prompt").get<std::vector<TokenId>>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "full") {
      h.mode = ActivationMode::kFull;
    } else if (mode == "subset") {
      h.mode = ActivationMode::kSubset;
    } else {
      violation(TraceViolation::kMalformedRecord, 1, "unknown activation mode '" + mode + "'");
    }
    if (auto it = j.find("subset"); it != j.end()) {
      for (const auto& n : *it) h.subset.push_back(parse_neuron(n));
    }
    const std::string source = j.value("source", std::string("engine"));
    if (source == "engine") {
      h.source = TraceSource::kEngine;
    } else if (source == "recorder") {
      h.source = TraceSource::kRecorder;
    } else {
      violation(TraceViolation::kMalformedRecord, 1, "unknown source '" + source + "'");
    }
  } catch (const json::exception& e) {
    violation(TraceViolation::kMalformedRecord, 1, std::string("bad header field: ") + e.what());
  }
  return h;
}

TraceStep parse_step(const json& j) {
  TraceStep s;
  s.t = j.at("t").get<std::uint32_t>();
  s.token = j.at("token").get<TokenId>();
  s.activations = j.at("act").get<std::vector<double>>();
  if (auto it = j.find("top"); it != j.end()) {
    for (const auto& pair : *it) {
      s.top.push_back(TokenLogprob{pair.at(0).get<TokenId>(), pair.at(1).get<double>()});
    }
  }
  return s;
}

AttributionSnapshot parse_snapshot(const json& body) {
  AttributionSnapshot snap;
  snap.step = body.at("step").get<std::uint32_t>();
  const bool has_raw = body.contains("pre_ffn") || body.contains("act");
  const bool has_scores = body.contains("scores");
  if (has_raw == has_scores) {
    throw TraceError(ErrorKind::kValidation, TraceViolation::kSnapshotShape, 0,
                     "snapshot needs exactly one of {pre_ffn+act, scores}");
  }
  if (has_raw) {
    RawAttribution raw;
    raw.pre_ffn = body.at("pre_ffn").get<std::vector<std::vector<double>>>();
    raw.activations = body.at("act").get<std::vector<std::vector<double>>>();
    snap.data = std::move(raw);
  } else {
    std::vector<NeuronScore> scores;
    for (const auto& row : body.at("scores")) {
      scores.push_back(NeuronScore{NeuronId{row.at(0).get<std::uint32_t>(), row.at(1).get<std::uint32_t>()},
                                   row.at(2).get<double>()});
    }
    snap.data = std::move(scores);
  }
  return snap;
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace

std::string_view to_string(TraceViolation v) noexcept {
  switch (v) {
    case TraceViolation::kBadMagic: return "bad-magic";
    case TraceViolation::kUnsupportedVersion: return "unsupported-version";
    case TraceViolation::kMalformedRecord: return "malformed-record";
    case TraceViolation::kInvalidDims: return "invalid-dims";
    case TraceViolation::kSubsetMismatch: return "subset-mismatch";
    case TraceViolation::kNeuronOutOfRange: return "neuron-out-of-range";
    case TraceViolation::kDuplicateNeuron: return "duplicate-neuron";
    case TraceViolation::kTokenOutOfRange: return "token-out-of-range";
    case TraceViolation::kStepOrder: return "step-order";
    case TraceViolation::kEarlyTermination: return "early-termination";
    case TraceViolation::kActivationWidth: return "activation-width";
    case TraceViolation::kNonFinite: return "non-finite";
    case TraceViolation::kSnapshotShape: return "snapshot-shape";
    case TraceViolation::kSnapshotStep: return "snapshot-step";
    case TraceViolation::kSnapshotWithoutTermination: return "snapshot-without-termination";
    case TraceViolation::kTrailingRecord: return "trailing-record";
  }
  return "unknown";
}

TraceError::TraceError(ErrorKind kind, TraceViolation violation, std::size_t line, const std::string& what)
    : Error(kind, (line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + what + " [" +
                      std::string(to_string(violation)) + "]"),
      violation_(violation),
      line_(line),
      detail_(what) {}

std::size_t TraceHeader::activation_width() const {
  return mode == ActivationMode::kFull ? dims.total_neurons() : subset.size();
}

std::optional<std::size_t> TraceHeader::column_of(const NeuronId& id) const {
  if (mode == ActivationMode::kFull) {
    if (!fits(id, dims)) return std::nullopt;
    return flat_index(id, dims);
  }
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i] == id) return i;
  }
  return std::nullopt;
}

bool ActivationTrace::terminated() const {
  return !steps.empty() && steps.back().token == header.termination_token;
}

void validate(const ActivationTrace& trace) {
  validate_header(trace.header);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    validate_step(trace.header, trace.steps[i], i, i + 1 == trace.steps.size());
  }
  if (trace.snapshot) validate_snapshot(trace);
}

std::size_t write_trace(const ActivationTrace& trace, std::ostream& out) {
  validate(trace);
  std::size_t bytes = 0;
  auto emit = [&](const ordered_json& j) {
    const std::string line = j.dump();
    out << line << '\n';
    bytes += line.size() + 1;
  };
  emit(header_json(trace.header));
  for (const auto& step : trace.steps) emit(step_json(step));
  if (trace.snapshot) emit(snapshot_json(*trace.snapshot));
  if (!out) fail(ErrorKind::kIo, "trace write failed");
  return bytes;
}

std::size_t write_trace(const ActivationTrace& trace, const std::filesystem::path& path) {
  validate(trace);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  return write_trace(trace, out);
}

ActivationTrace read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) {
    violation(TraceViolation::kBadMagic, 1, "empty trace file", ErrorKind::kFormat);
  }
  ActivationTrace trace;
  trace.header = parse_header(line);
  validate_header(trace.header);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    if (trace.snapshot) {
      violation(TraceViolation::kTrailingRecord, line_no, "record after the attribution snapshot");
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      violation(TraceViolation::kMalformedRecord, line_no, "unparsable record (truncated file?)");
    }
    try {
      if (auto it = j.find("snapshot"); it != j.end()) {
        trace.snapshot = parse_snapshot(*it);
        validate_snapshot(trace);
      } else {
        trace.steps.push_back(parse_step(j));
        // The last-step exemption for the termination token is settled once
        // the whole file has been read.
        validate_step(trace.header, trace.steps.back(), trace.steps.size() - 1, true);
      }
    } catch (const TraceError& e) {
      if (e.line() == line_no) throw;
      throw TraceError(e.kind(), e.violation(), line_no, e.detail());
    } catch (const json::exception& e) {
      violation(TraceViolation::kMalformedRecord, line_no, std::string("bad record field: ") + e.what());
    }
  }
  for (std::size_t i = 0; i + 1 < trace.steps.size(); ++i) {
    if (trace.steps[i].token == trace.header.termination_token) {
      violation(TraceViolation::kEarlyTermination, i + 2, "termination token emitted before the last step");
    }
  }
  return trace;
}

ActivationTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open trace " + path.string());
  try {
    return read_trace(in);
  } catch (const TraceError& e) {
    throw TraceError(e.kind(), e.violation(), e.line(), path.string() + ": " + e.detail());
  }
}

std::vector<double> extract_trajectory(const ActivationTrace& trace, const NeuronId& neuron) {
  const auto column = trace.header.column_of(neuron);
  if (!column) {
    fail(ErrorKind::kCoverage, "neuron " + to_string(neuron) + " is not monitored by this trace");
  }
  std::vector<double> c;
  c.reserve(trace.steps.size());
  for (const auto& step : trace.steps) c.push_back(step.activations[*column]);
  return c;
}

}  // namespace neat
