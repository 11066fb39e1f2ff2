#include "neat/core/replay.hpp"

#include <fstream>
#include <ostream>

#include <json.hpp>

#include "neat/core/errors.hpp"
#include "text.hpp"

namespace neat {
namespace {

[[noreturn]] void log_error(std::size_t line, const std::string& what) {
  throw LineError(ErrorKind::kFormat, line, "neatdec: " + what);
}

std::string optional_number(const std::optional<double>& v, int digits = 4) {
  return v ? text::fixed(*v, digits) : std::string("-");
}

}  // namespace

std::optional<std::uint32_t> DecisionLog::exit_step() const {
  for (const auto& d : decisions) {
    if (d.kind == DecisionKind::kExit) return d.step;
  }
  return std::nullopt;
}

double DecisionLog::length_reduction() const {
  if (!reference_length || *reference_length == 0) {
    fail(ErrorKind::kValidation, "decision log '" + name + "' has no reference length");
  }
  const auto exit = exit_step();
  if (!exit) return 0.0;
  return 1.0 - static_cast<double>(*exit) / static_cast<double>(*reference_length);
}

void write_decision_log(const DecisionLog& log, std::ostream& out) {
  out << "# neatdec 1 name=" << log.name;
  if (log.reference_length) out << " length=" << *log.reference_length;
  out << '\n';
  for (const auto& d : log.decisions) {
    out << d.step << ' ' << to_string(d.kind);
    if (d.evidence) {
      out << ' ' << text::format_double(d.evidence->rho) << ' ' << text::format_double(d.evidence->phi);
    } else {
      out << " - -";
    }
    out << '\n';
  }
}

void write_decision_log(const DecisionLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_decision_log(log, out);
}

DecisionLog read_decision_log(std::istream& in) {
  DecisionLog log;
  std::string line;
  if (!std::getline(in, line)) log_error(1, "empty file");
  auto head = text::split_ws(line);
  if (head.size() < 3 || head[0] != "#" || head[1] != "neatdec") log_error(1, "missing '# neatdec' header");
  if (head[2] != "1") log_error(1, "unsupported version '" + std::string(head[2]) + "'");
  for (std::size_t i = 3; i < head.size(); ++i) {
    if (head[i].starts_with("name=")) {
      log.name = std::string(head[i].substr(5));
    } else if (head[i].starts_with("length=")) {
      const auto v = text::parse_uint(head[i].substr(7));
      if (!v || *v == 0 || *v > 0xFFFFFFFFULL) log_error(1, "bad length");
      log.reference_length = static_cast<std::uint32_t>(*v);
    }
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = text::split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 4) log_error(line_no, "expected 't kind rho phi'");
    const auto t = text::parse_uint(f[0]);
    if (!t || *t > 0xFFFFFFFFULL) log_error(line_no, "bad step index");
    const auto kind = parse_decision_kind(f[1]);
    if (!kind) log_error(line_no, "unknown decision '" + std::string(f[1]) + "'");
    Decision d{static_cast<std::uint32_t>(*t), *kind, std::nullopt};
    if (f[2] != "-" || f[3] != "-") {
      const auto rho = text::parse_double(f[2]);
      const auto phi = text::parse_double(f[3]);
      if (!rho || !phi) log_error(line_no, "bad rho/phi");
      d.evidence = AlignmentSignal{*rho, *phi, d.step};
    }
    if (!log.decisions.empty() && d.step <= log.decisions.back().step) {
      log_error(line_no, "steps must be strictly increasing");
    }
    log.decisions.push_back(d);
  }
  return log;
}

DecisionLog read_decision_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open decision log " + path.string());
  try {
    return read_decision_log(in);
  } catch (const LineError& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

TraceReplay replay_trace(const ActivationTrace& trace, const ExitNeuronSet& set, const ControllerConfig& config,
                         std::string name) {
  ExitController controller(set, config);
  const auto columns = controller.trace_columns(trace.header);

  TraceReplay r;
  r.name = std::move(name);
  r.length = static_cast<std::uint32_t>(trace.steps.size());
  for (const auto& step : trace.steps) {
    const Decision d = controller.observe(step, columns);
    ++r.counts[static_cast<std::size_t>(d.kind)];
    if (d.kind == DecisionKind::kExit) {
      r.exit_step = d.step;
      break;
    }
  }
  r.counterfactual_suppressions = r.counts[static_cast<std::size_t>(DecisionKind::kSuppress)];
  r.log.name = r.name;
  r.log.reference_length = r.length;
  r.log.decisions = controller.log();
  r.length_reduction = r.length > 0 ? r.log.length_reduction() : 0.0;
  return r;
}

ReplayReport replay(std::span<const NamedTrace> traces, const ExitNeuronSet& set, const ControllerConfig& config) {
  ReplayReport report;
  double lr_sum = 0.0, exit_sum = 0.0;
  std::size_t exits = 0;
  for (const auto& nt : traces) {
    try {
      report.traces.push_back(replay_trace(nt.trace, set, config, nt.name));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kCoverage && e.kind() != ErrorKind::kCompatibility) throw;
      report.skipped.push_back({nt.name, e.what()});
      continue;
    }
    const TraceReplay& r = report.traces.back();
    lr_sum += r.length_reduction;
    report.total_counterfactual_suppressions += r.counterfactual_suppressions;
    if (r.exit_step) {
      exit_sum += *r.exit_step;
      ++exits;
    }
  }
  if (!report.traces.empty()) report.mean_length_reduction = lr_sum / static_cast<double>(report.traces.size());
  if (exits > 0) report.mean_exit_step = exit_sum / static_cast<double>(exits);
  return report;
}

void write_replay_table(const ReplayReport& report, std::ostream& out) {
  out << text::pad("trace", 24) << text::pad("length", 8) << text::pad("exit", 6) << text::pad("LR", 8)
      << text::pad("suppress", 10) << '\n';
  for (const auto& r : report.traces) {
    out << text::pad(r.name, 24) << text::pad(std::to_string(r.length), 8)
        << text::pad(r.exit_step ? std::to_string(*r.exit_step) : "-", 6)
        << text::pad(text::fixed(r.length_reduction), 8)
        << text::pad(std::to_string(r.counterfactual_suppressions), 10) << '\n';
  }
  out << "replayed " << report.traces.size() << " traces, skipped " << report.skipped.size()
      << "; mean LR " << text::fixed(report.mean_length_reduction) << ", mean exit step "
      << optional_number(report.mean_exit_step, 2) << ", counterfactual suppressions "
      << report.total_counterfactual_suppressions << '\n';
  for (const auto& s : report.skipped) out << "skipped " << s.name << ": " << s.reason << '\n';
}

void write_replay_records(const ReplayReport& report, std::ostream& out) {
  using ordered_json = nlohmann::ordered_json;
  for (const auto& r : report.traces) {
    ordered_json j;
    j["record"] = "trace";
    j["name"] = r.name;
    j["length"] = r.length;
    j["exit_step"] = r.exit_step ? ordered_json(*r.exit_step) : ordered_json(nullptr);
    j["length_reduction"] = r.length_reduction;
    j["continue"] = r.counts[0];
    j["suppress"] = r.counts[1];
    j["exit"] = r.counts[2];
    j["counterfactual_suppressions"] = r.counterfactual_suppressions;
    out << j.dump() << '\n';
  }
  for (const auto& s : report.skipped) {
    ordered_json j;
    j["record"] = "skipped";
    j["name"] = s.name;
    j["reason"] = s.reason;
    out << j.dump() << '\n';
  }
  ordered_json summary;
  summary["record"] = "summary";
  summary["traces"] = report.traces.size();
  summary["skipped"] = report.skipped.size();
  summary["mean_length_reduction"] = report.mean_length_reduction;
  summary["mean_exit_step"] = report.mean_exit_step ? ordered_json(*report.mean_exit_step) : ordered_json(nullptr);
  summary["counterfactual_suppressions"] = report.total_counterfactual_suppressions;
  out << summary.dump() << '\n';
}

LogSummary summarize_logs(std::span<const DecisionLog> logs) {
  if (logs.empty()) fail(ErrorKind::kInvalidArgument, "no decision logs to summarize");
  LogSummary s;
  s.logs = logs.size();
  double exit_sum = 0.0, lr_sum = 0.0;
  for (const auto& log : logs) {
    for (const auto& d : log.decisions) ++s.counts[static_cast<std::size_t>(d.kind)];
    if (const auto e = log.exit_step()) {
      ++s.exits;
      exit_sum += *e;
    }
    lr_sum += log.length_reduction();
  }
  if (s.exits > 0) s.mean_exit_step = exit_sum / static_cast<double>(s.exits);
  s.mean_length_reduction = lr_sum / static_cast<double>(logs.size());
  return s;
}

void write_summary_table(const LogSummary& s, std::ostream& out) {
  out << "logs            " << s.logs << '\n'
      << "continue        " << s.counts[0] << '\n'
      << "suppress        " << s.counts[1] << '\n'
      << "exit            " << s.counts[2] << '\n'
      << "exited logs     " << s.exits << '\n'
      << "mean exit step  " << optional_number(s.mean_exit_step, 2) << '\n'
      << "mean LR         " << text::fixed(s.mean_length_reduction) << '\n';
}

void write_summary_records(const LogSummary& s, std::ostream& out) {
  nlohmann::ordered_json j;
  j["record"] = "summary";
  j["logs"] = s.logs;
  j["continue"] = s.counts[0];
  j["suppress"] = s.counts[1];
  j["exit"] = s.counts[2];
  j["exits"] = s.exits;
  j["mean_exit_step"] = s.mean_exit_step ? nlohmann::ordered_json(*s.mean_exit_step) : nlohmann::ordered_json(nullptr);
  j["mean_length_reduction"] = s.mean_length_reduction;
  out << j.dump() << '\n';
}

}  // namespace neat
