#include "neat/core/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include <json.hpp>

#include "neat/core/errors.hpp"
#include "neat/core/temporal.hpp"
#include "text.hpp"

namespace neat {
namespace {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

// Termination-step activations live on the last recorded step.
const TraceStep& termination_step(const CalibrationSample& sample) {
  const auto& trace = sample.trace;
  if (!trace.terminated()) {
    fail(ErrorKind::kCalibrationInput,
         "sample '" + sample.id + "' did not end with the termination token");
  }
  return trace.steps.back();
}

std::string config_line(const CalibrationConfig& c) {
  return "k=" + std::to_string(c.k) + " tau_cons=" + text::format_double(c.tau_cons) +
         " tau_com=" + text::format_double(c.tau_com) +
         " tau_ent=" + (c.tau_ent ? text::format_double(*c.tau_ent) : std::string("off")) +
         " min_set_size=" + std::to_string(c.min_set_size);
}

[[noreturn]] void set_error(std::size_t line, const std::string& what) {
  throw LineError(ErrorKind::kFormat, line, "neatset: " + what);
}

CalibrationConfig parse_config_line(const std::vector<std::string_view>& fields, std::size_t line) {
  CalibrationConfig c;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    if (eq == std::string_view::npos) set_error(line, "config field without '='");
    const auto key = fields[i].substr(0, eq);
    const auto value = fields[i].substr(eq + 1);
    if (key == "tau_ent" && value == "off") {
      c.tau_ent.reset();
      continue;
    }
    const auto num = text::parse_double(value);
    if (!num) set_error(line, "bad config value for " + std::string(key));
    if (key == "k") {
      c.k = static_cast<std::size_t>(*num);
    } else if (key == "tau_cons") {
      c.tau_cons = *num;
    } else if (key == "tau_com") {
      c.tau_com = *num;
    } else if (key == "tau_ent") {
      c.tau_ent = *num;
    } else if (key == "min_set_size") {
      c.min_set_size = static_cast<std::size_t>(*num);
    }
  }
  return c;
}

std::string failure_names(std::uint8_t failed) {
  std::string out;
  auto add = [&](const char* name) {
    if (!out.empty()) out += ",";
    out += name;
  };
  if (failed & kFailConsistency) add("consistency");
  if (failed & kFailCom) add("com");
  if (failed & kFailEntropy) add("entropy");
  if (failed & kFailNoTrajectory) add("no-trajectory");
  return out.empty() ? "-" : out;
}

}  // namespace

void CalibrationConfig::validate() const {
  if (k < 1) fail(ErrorKind::kInvalidArgument, "k must be >= 1");
  // tau_cons above 1 is accepted: it is how a sweep asks for an empty set.
  if (!(tau_cons >= 0.0) || !std::isfinite(tau_cons)) {
    fail(ErrorKind::kInvalidArgument, "tau_cons must be a finite value >= 0");
  }
  if (!(tau_com >= 0.0) || !std::isfinite(tau_com)) {
    fail(ErrorKind::kInvalidArgument, "tau_com must be a finite value >= 0");
  }
  if (tau_ent && (!(*tau_ent >= 0.0) || !std::isfinite(*tau_ent))) {
    fail(ErrorKind::kInvalidArgument, "tau_ent must be a finite value >= 0");
  }
}

const NeuronAggregate* AggregateStats::find(const NeuronId& id) const {
  auto it = std::lower_bound(neurons.begin(), neurons.end(), id,
                             [](const NeuronAggregate& a, const NeuronId& b) { return a.neuron < b; });
  return it != neurons.end() && it->neuron == id ? &*it : nullptr;
}

AggregateStats aggregate_candidates(std::span<const CandidateList> lists,
                                    std::span<const CalibrationSample> samples) {
  if (samples.empty()) fail(ErrorKind::kCalibrationInput, "empty calibration set");
  std::map<std::string, const CalibrationSample*> by_id;
  for (const auto& s : samples) {
    if (!by_id.emplace(s.id, &s).second) {
      fail(ErrorKind::kCalibrationInput, "duplicate sample id '" + s.id + "'");
    }
    termination_step(s);
  }
  if (lists.size() != samples.size()) {
    fail(ErrorKind::kCalibrationInput, "candidate lists and samples differ in count");
  }

  struct Acc {
    std::uint32_t appearances = 0;
    std::uint32_t trajectory_samples = 0;
    double com = 0.0, entropy = 0.0, score = 0.0;
    std::uint32_t term_samples = 0;
    double term = 0.0;
  };
  std::map<NeuronId, Acc> acc;

  for (const auto& list : lists) {
    auto it = by_id.find(list.sample_id);
    if (it == by_id.end()) {
      fail(ErrorKind::kCalibrationInput, "candidate list for unknown sample '" + list.sample_id + "'");
    }
    const ActivationTrace& trace = it->second->trace;
    for (const auto& cand : list.candidates) {
      Acc& a = acc[cand.neuron];
      ++a.appearances;
      a.score += cand.score;
      const auto column = trace.header.column_of(cand.neuron);
      if (!column) continue;  // scored but not monitored by this trace
      a.term += trace.steps.back().activations[*column];
      ++a.term_samples;
      const auto c = extract_trajectory(trace, cand.neuron);
      const auto com = center_of_mass(c);
      if (!com) continue;  // dead trajectory, excluded from the means
      a.com += *com;
      a.entropy += *activation_entropy(c);
      ++a.trajectory_samples;
    }
  }

  AggregateStats stats;
  stats.sample_count = samples.size();
  stats.neurons.reserve(acc.size());
  for (const auto& [id, a] : acc) {
    NeuronAggregate n;
    n.neuron = id;
    n.appearances = a.appearances;
    n.omega = static_cast<double>(a.appearances) / static_cast<double>(samples.size());
    n.trajectory_samples = a.trajectory_samples;
    if (a.trajectory_samples > 0) {
      n.mean_com = a.com / a.trajectory_samples;
      n.mean_entropy = a.entropy / a.trajectory_samples;
    }
    if (a.term_samples > 0) n.mean_termination_activation = a.term / a.term_samples;
    n.mean_score = a.score / a.appearances;
    stats.neurons.push_back(n);
  }
  return stats;
}

Selection select_exit_neurons(const AggregateStats& stats, const CalibrationConfig& config) {
  config.validate();
  if (stats.neurons.empty()) fail(ErrorKind::kInvalidArgument, "select_exit_neurons: empty statistics");

  Selection sel;
  std::vector<NearMiss> rejected;
  for (const auto& n : stats.neurons) {
    NearMiss miss{n, kFailNone, 0.0};
    if (n.omega < config.tau_cons) {
      miss.failed |= kFailConsistency;
      miss.shortfall += config.tau_cons - n.omega;
    }
    if (n.trajectory_samples == 0) {
      miss.failed |= kFailNoTrajectory;
      miss.shortfall += config.tau_com;
    } else {
      if (n.mean_com < config.tau_com) {
        miss.failed |= kFailCom;
        miss.shortfall += config.tau_com - n.mean_com;
      }
      if (config.tau_ent && n.mean_entropy > *config.tau_ent) {
        miss.failed |= kFailEntropy;
        miss.shortfall += n.mean_entropy - *config.tau_ent;
      }
    }
    if (miss.failed == kFailNone) {
      sel.neurons.push_back(n.neuron);
    } else {
      rejected.push_back(miss);
    }
  }
  // stats.neurons is sorted, so sel.neurons already is.
  sel.below_floor = sel.neurons.size() < config.min_set_size;
  if (sel.neurons.empty() || sel.below_floor) {
    std::stable_sort(rejected.begin(), rejected.end(),
                     [](const NearMiss& a, const NearMiss& b) { return a.shortfall < b.shortfall; });
    if (rejected.size() > 10) rejected.resize(10);
    sel.near_misses = std::move(rejected);
  }
  return sel;
}

std::vector<double> compute_reference_pattern(std::span<const CalibrationSample> samples,
                                              std::span<const NeuronId> neurons) {
  if (samples.empty()) fail(ErrorKind::kCalibrationInput, "empty calibration set");
  std::vector<double> sum(neurons.size(), 0.0);
  for (const auto& sample : samples) {
    const TraceStep& step = termination_step(sample);
    for (std::size_t i = 0; i < neurons.size(); ++i) {
      const auto column = sample.trace.header.column_of(neurons[i]);
      if (!column) {
        fail(ErrorKind::kCoverage, "sample '" + sample.id + "' does not monitor neuron " + to_string(neurons[i]));
      }
      sum[i] += step.activations[*column];
    }
  }
  for (double& v : sum) v /= static_cast<double>(samples.size());
  return sum;
}

void ExitNeuronSet::check_compatible(const ModelDims& model_dims) const {
  if (!(dims == model_dims)) {
    fail(ErrorKind::kCompatibility, "exit-neuron set was calibrated for " + describe(dims) +
                                        ", model is " + describe(model_dims));
  }
  for (const auto& id : neurons) {
    if (!fits(id, model_dims)) {
      fail(ErrorKind::kCompatibility, "exit neuron " + to_string(id) + " outside " + describe(model_dims));
    }
  }
}

void write_exit_set(const ExitNeuronSet& set, std::ostream& out) {
  if (set.neurons.size() != set.reference.size()) {
    fail(ErrorKind::kValidation, "exit-neuron set and reference pattern differ in length");
  }
  const ModelDims& d = set.dims;
  out << "neatset 1\n";
  out << "dims " << d.layers << ' ' << d.d_model << ' ' << d.d_ff << ' ' << d.vocab << ' ' << d.heads << '\n';
  out << "config " << config_line(set.config) << '\n';
  out << "calibration_hash " << hex64(set.calibration_hash) << '\n';
  out << "samples " << set.sample_count << '\n';
  out << "neurons " << set.neurons.size() << '\n';
  for (std::size_t i = 0; i < set.neurons.size(); ++i) {
    out << set.neurons[i].layer << ' ' << set.neurons[i].index << ' ' << text::format_double(set.reference[i])
        << '\n';
  }
}

void write_exit_set(const ExitNeuronSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_exit_set(set, out);
}

ExitNeuronSet read_exit_set(std::istream& in) {
  ExitNeuronSet set;
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](std::string_view key) {
    if (!std::getline(in, line)) set_error(line_no + 1, "missing '" + std::string(key) + "' line");
    ++line_no;
    auto fields = text::split_ws(line);
    if (fields.empty() || fields[0] != key) set_error(line_no, "expected '" + std::string(key) + "'");
    return fields;
  };
  auto uint_field = [&](std::string_view s) {
    const auto v = text::parse_uint(s);
    if (!v || *v > 0xFFFFFFFFULL) set_error(line_no, "bad integer '" + std::string(s) + "'");
    return static_cast<std::uint32_t>(*v);
  };

  auto magic = next("neatset");
  if (magic.size() != 2 || magic[1] != "1") set_error(line_no, "unsupported neatset version");
  auto dims = next("dims");
  if (dims.size() != 6) set_error(line_no, "dims needs five values");
  set.dims = ModelDims{uint_field(dims[1]), uint_field(dims[2]), uint_field(dims[3]), uint_field(dims[4]),
                       uint_field(dims[5])};
  try {
    validate(set.dims);
  } catch (const Error& e) {
    set_error(line_no, e.what());
  }
  set.config = parse_config_line(next("config"), line_no);
  auto hash = next("calibration_hash");
  if (hash.size() != 2 || hash[1].size() != 16) set_error(line_no, "calibration_hash needs 16 hex digits");
  set.calibration_hash = 0;
  for (char c : hash[1]) {
    const int v = (c >= '0' && c <= '9') ? c - '0' : (c >= 'a' && c <= 'f') ? c - 'a' + 10 : -1;
    if (v < 0) set_error(line_no, "calibration_hash needs 16 hex digits");
    set.calibration_hash = (set.calibration_hash << 4) | static_cast<std::uint64_t>(v);
  }
  auto samples = next("samples");
  if (samples.size() != 2) set_error(line_no, "samples needs one value");
  set.sample_count = uint_field(samples[1]);
  auto count_fields = next("neurons");
  if (count_fields.size() != 2) set_error(line_no, "neurons needs one value");
  const std::uint32_t count = uint_field(count_fields[1]);

  for (std::uint32_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) set_error(line_no + 1, "expected " + std::to_string(count) + " neuron lines");
    ++line_no;
    auto f = text::split_ws(line);
    if (f.size() != 3) set_error(line_no, "neuron line needs 'layer index mu_ref'");
    const NeuronId id{uint_field(f[0]), uint_field(f[1])};
    const auto mu = text::parse_double(f[2]);
    if (!mu || !std::isfinite(*mu)) set_error(line_no, "bad mu_ref value");
    if (!fits(id, set.dims)) {
      throw LineError(ErrorKind::kValidation, line_no, "neatset: neuron " + to_string(id) + " outside dims");
    }
    if (!set.neurons.empty() && !(set.neurons.back() < id)) {
      throw LineError(ErrorKind::kValidation, line_no, "neatset: neurons must be strictly ascending");
    }
    set.neurons.push_back(id);
    set.reference.push_back(*mu);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!text::split_ws(line).empty()) set_error(line_no, "unexpected trailing content");
  }
  return set;
}

ExitNeuronSet read_exit_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open exit-neuron set " + path.string());
  try {
    return read_exit_set(in);
  } catch (const LineError& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::uint64_t calibration_hash(std::span<const CalibrationSample> samples) {
  std::vector<std::uint64_t> digests;
  digests.reserve(samples.size());
  for (const auto& s : samples) {
    std::ostringstream buf;
    write_trace(s.trace, buf);
    digests.push_back(fnv1a(buf.str()));
  }
  std::sort(digests.begin(), digests.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint64_t d : digests) h = fnv1a(hex64(d), h);
  return h;
}

CalibrationResult calibrate(std::span<const CalibrationSample> samples, const ModelWeights* weights,
                            const CalibrationConfig& config) {
  config.validate();
  if (samples.empty()) fail(ErrorKind::kCalibrationInput, "calibration needs at least one trace");
  const ModelDims dims = samples.front().trace.header.dims;
  for (const auto& s : samples) {
    if (!(s.trace.header.dims == dims)) {
      fail(ErrorKind::kCompatibility, "sample '" + s.id + "' has dims " + describe(s.trace.header.dims) +
                                          ", expected " + describe(dims));
    }
    if (!s.trace.terminated() || !s.trace.snapshot) {
      fail(ErrorKind::kCalibrationInput,
           "sample '" + s.id + "' is not a naturally terminated trace with attribution data");
    }
  }
  if (weights != nullptr && !(weights->dims == dims)) {
    fail(ErrorKind::kCompatibility, "model " + describe(weights->dims) + " does not match traces " + describe(dims));
  }

  CalibrationResult result;
  const std::size_t k = std::min(config.k, dims.total_neurons());
  for (const auto& s : samples) {
    if (s.trace.snapshot->has_raw() && weights == nullptr) {
      fail(ErrorKind::kPath, "sample '" + s.id + "' carries raw residuals; calibration needs the model weights");
    }
  }
  // Samples rank independently; collecting in input order keeps the result
  // and the first reported error deterministic.
  std::vector<std::future<CandidateList>> ranked;
  ranked.reserve(samples.size());
  for (const auto& s : samples) {
    ranked.push_back(std::async(std::launch::async, [&s, weights, k] {
      const AttributionSnapshot& snap = *s.trace.snapshot;
      if (snap.has_raw()) return rank_candidates(*weights, snap, s.trace.header.termination_token, k, s.id);
      return rank_candidates(importance_table(snap, s.id), k);
    }));
  }
  result.candidates.reserve(samples.size());
  for (auto& f : ranked) result.candidates.push_back(f.get());
  const bool any = std::any_of(result.candidates.begin(), result.candidates.end(),
                               [](const CandidateList& c) { return !c.candidates.empty(); });
  if (!any) fail(ErrorKind::kNoSignal, "no neuron has a positive importance score in any sample");

  result.stats = aggregate_candidates(result.candidates, samples);
  result.selection = select_exit_neurons(result.stats, config);

  result.set.dims = dims;
  result.set.config = config;
  result.set.calibration_hash = calibration_hash(samples);
  result.set.sample_count = samples.size();
  if (result.selection.empty()) {
    result.status = CalibrationStatus::kEmptySet;
    return result;
  }
  result.set.neurons = result.selection.neurons;
  result.set.reference = compute_reference_pattern(samples, result.set.neurons);
  double norm = 0.0;
  for (double v : result.set.reference) norm += v * v;
  if (!(norm > 0.0)) fail(ErrorKind::kNoSignal, "reference pattern of the selected neurons has zero norm");
  result.status = result.selection.below_floor ? CalibrationStatus::kBelowFloor : CalibrationStatus::kOk;
  return result;
}

void write_calibration_table(const CalibrationResult& result, std::ostream& out) {
  const auto& cfg = result.set.config;
  out << "calibration: " << result.stats.sample_count << " samples, " << result.stats.neurons.size()
      << " aggregated neurons, " << result.set.neurons.size() << " selected (" << config_line(cfg) << ")\n";
  out << text::pad("layer", 6) << text::pad("index", 7) << text::pad("omega", 9) << text::pad("com", 9)
      << text::pad("entropy", 10) << text::pad("mu_ref", 12) << '\n';
  for (std::size_t i = 0; i < result.set.neurons.size(); ++i) {
    const auto* n = result.stats.find(result.set.neurons[i]);
    out << text::pad(std::to_string(n->neuron.layer), 6) << text::pad(std::to_string(n->neuron.index), 7)
        << text::pad(text::fixed(n->omega), 9) << text::pad(text::fixed(n->mean_com), 9)
        << text::pad(text::fixed(n->mean_entropy), 10) << text::pad(text::fixed(result.set.reference[i], 6), 12)
        << '\n';
  }
  if (result.status == CalibrationStatus::kEmptySet) {
    out << "warning: no neuron passed the thresholds; nearest misses:\n";
  } else if (result.status == CalibrationStatus::kBelowFloor) {
    out << "warning: selection is below min_set_size=" << cfg.min_set_size << "; nearest misses:\n";
  }
  for (const auto& miss : result.selection.near_misses) {
    out << text::pad(std::to_string(miss.stats.neuron.layer), 6)
        << text::pad(std::to_string(miss.stats.neuron.index), 7) << text::pad(text::fixed(miss.stats.omega), 9)
        << text::pad(text::fixed(miss.stats.mean_com), 9) << text::pad(text::fixed(miss.stats.mean_entropy), 10)
        << "  failed: " << failure_names(miss.failed) << '\n';
  }
}

void write_calibration_records(const CalibrationResult& result, std::ostream& out) {
  using ordered_json = nlohmann::ordered_json;
  const auto& cfg = result.set.config;
  ordered_json summary;
  summary["record"] = "calibration";
  summary["samples"] = result.stats.sample_count;
  summary["aggregated"] = result.stats.neurons.size();
  summary["selected"] = result.set.neurons.size();
  summary["status"] = result.status == CalibrationStatus::kOk          ? "ok"
                      : result.status == CalibrationStatus::kEmptySet ? "empty"
                                                                       : "below-floor";
  summary["k"] = cfg.k;
  summary["tau_cons"] = cfg.tau_cons;
  summary["tau_com"] = cfg.tau_com;
  summary["tau_ent"] = cfg.tau_ent ? ordered_json(*cfg.tau_ent) : ordered_json(nullptr);
  summary["calibration_hash"] = hex64(result.set.calibration_hash);
  out << summary.dump() << '\n';

  for (const auto& n : result.stats.neurons) {
    ordered_json j;
    j["record"] = "neuron";
    j["layer"] = n.neuron.layer;
    j["index"] = n.neuron.index;
    j["omega"] = n.omega;
    j["appearances"] = n.appearances;
    j["trajectory_samples"] = n.trajectory_samples;
    j["mean_com"] = n.mean_com;
    j["mean_entropy"] = n.mean_entropy;
    j["mean_termination_activation"] = n.mean_termination_activation;
    j["mean_score"] = n.mean_score;
    const auto it = std::lower_bound(result.set.neurons.begin(), result.set.neurons.end(), n.neuron);
    const bool selected = it != result.set.neurons.end() && *it == n.neuron;
    j["selected"] = selected;
    if (selected) j["mu_ref"] = result.set.reference[static_cast<std::size_t>(it - result.set.neurons.begin())];
    out << j.dump() << '\n';
  }
}

}  // namespace neat
