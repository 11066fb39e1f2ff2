#include <doctest.h>

#include <random>
#include <sstream>

#include "neat/core/trace.hpp"
#include "support.hpp"

using namespace neat;

#ifndef NEAT_TEST_DATA
#define NEAT_TEST_DATA "tests/data"
#endif

namespace {

const std::filesystem::path kGolden = std::filesystem::path(NEAT_TEST_DATA) / "recorder_subset.neatrace";

std::string serialize(const ActivationTrace& t) {
  std::ostringstream out;
  write_trace(t, out);
  return out.str();
}

ActivationTrace parse(const std::string& text) {
  std::istringstream in(text);
  return read_trace(in);
}

// Expects `fn` to throw a TraceError with the given tag (and line, if nonzero).
template <typename Fn>
void expect_violation(Fn&& fn, TraceViolation expected, std::size_t line = 0) {
  try {
    fn();
    FAIL("expected violation " << to_string(expected));
  } catch (const TraceError& e) {
    CHECK(e.violation() == expected);
    if (line != 0) CHECK(e.line() == line);
  }
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

ActivationTrace random_trace(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<std::uint32_t> len(1, 12);
  std::normal_distribution<double> value(0.0, 3.0);
  const ModelDims dims{2, 8, 12, 16, 2};
  ActivationTrace t;
  t.header.dims = dims;
  t.header.termination_token = 0;
  t.header.prompt = {11, 12, 13};
  if (coin(rng)) {
    t.header.mode = ActivationMode::kSubset;
    t.header.subset = {{1, 3}, {0, 0}, {1, 11}};
    t.header.source = TraceSource::kRecorder;
  }
  const std::uint32_t T = len(rng);
  const bool terminated = coin(rng);
  for (std::uint32_t i = 1; i <= T; ++i) {
    TraceStep s;
    s.t = i;
    s.token = (i == T && terminated) ? 0 : 5 + (i % 10);
    s.activations.resize(t.header.activation_width());
    for (double& a : s.activations) a = value(rng);
    if (coin(rng)) s.top = {{s.token, -value(rng) * value(rng)}, {3, -9.5}};
    t.steps.push_back(std::move(s));
  }
  if (terminated && coin(rng)) {
    if (t.header.mode == ActivationMode::kFull) {
      RawAttribution raw;
      raw.pre_ffn.assign(dims.layers, std::vector<double>(dims.d_model));
      raw.activations.assign(dims.layers, std::vector<double>(dims.d_ff));
      for (auto& row : raw.pre_ffn) for (double& v : row) v = value(rng);
      for (auto& row : raw.activations) for (double& v : row) v = value(rng);
      t.snapshot = AttributionSnapshot{T, std::move(raw)};
    } else {
      t.snapshot = AttributionSnapshot{T, std::vector<NeuronScore>{{{1, 3}, value(rng)}, {{0, 7}, value(rng)}}};
    }
  }
  return t;
}

}  // namespace

TEST_CASE("random traces survive a write/read round trip exactly") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 300; ++i) {
    const ActivationTrace t = random_trace(rng);
    const std::string text = serialize(t);
    const ActivationTrace back = parse(text);
    REQUIRE(back == t);
    CHECK(serialize(back) == text);
  }
}

TEST_CASE("engine traces round-trip through a file") {
  const auto& f = testing::planted_fixture();
  const auto dir = testing::scratch_dir("trace_file");
  const auto path = dir / "cal.neatrace";
  const auto& original = f.calibration.front().trace;
  const std::size_t bytes = write_trace(original, path);
  CHECK(bytes == std::filesystem::file_size(path));
  CHECK(read_trace(path) == original);
}

TEST_CASE("golden recorder trace parses under the full validator") {
  const ActivationTrace t = read_trace(kGolden);
  CHECK(t.header.source == TraceSource::kRecorder);
  CHECK(t.header.mode == ActivationMode::kSubset);
  CHECK(t.header.activation_width() == 3);
  CHECK(t.length() == 5);
  CHECK(t.terminated());
  REQUIRE(t.snapshot.has_value());
  CHECK_FALSE(t.snapshot->has_raw());
  CHECK(t.snapshot->scores().size() == 4);
  CHECK(t.steps[0].top.size() == 2);
  CHECK(t.header.column_of({0, 3}) == 1u);
  CHECK_FALSE(t.header.column_of({0, 4}).has_value());
  const auto traj = extract_trajectory(t, {1, 5});
  CHECK(traj == std::vector<double>{0.0, 0.25, 0.5, 1.0, 2.0});
}

TEST_CASE("unmonitored neurons raise a coverage error") {
  const ActivationTrace t = read_trace(kGolden);
  try {
    extract_trajectory(t, {0, 4});
    FAIL("expected coverage error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCoverage);
  }
}

TEST_CASE("header violations") {
  const std::string golden = serialize(read_trace(kGolden));
  auto lines = lines_of(golden);

  SUBCASE("bad magic") {
    expect_violation([&] { parse("{\"trace\":1}\n"); }, TraceViolation::kBadMagic, 1);
    try {
      parse("not json\n");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kFormat);
    }
    expect_violation([&] { parse(""); }, TraceViolation::kBadMagic, 1);
  }
  SUBCASE("unsupported version is a format error") {
    auto l = lines;
    l[0].replace(0, 15, "{\"neat_trace\":2");
    try {
      parse(join_lines(l));
      FAIL("expected failure");
    } catch (const TraceError& e) {
      CHECK(e.kind() == ErrorKind::kFormat);
      CHECK(e.violation() == TraceViolation::kUnsupportedVersion);
    }
  }
  SUBCASE("invalid dims") {
    auto l = lines;
    l[0].replace(l[0].find("\"heads\":2"), 9, "\"heads\":3");
    expect_violation([&] { parse(join_lines(l)); }, TraceViolation::kInvalidDims, 1);
  }
  SUBCASE("subset mode without a subset") {
    auto t = read_trace(kGolden);
    t.header.subset.clear();
    expect_violation([&] { validate(t); }, TraceViolation::kSubsetMismatch, 1);
  }
  SUBCASE("subset neuron out of range and duplicated") {
    auto t = read_trace(kGolden);
    t.header.subset[0] = {2, 0};
    expect_violation([&] { validate(t); }, TraceViolation::kNeuronOutOfRange, 1);
    t.header.subset[0] = {0, 3};
    expect_violation([&] { validate(t); }, TraceViolation::kDuplicateNeuron, 1);
  }
  SUBCASE("termination token outside the vocabulary") {
    auto t = read_trace(kGolden);
    t.header.termination_token = 20;
    expect_violation([&] { validate(t); }, TraceViolation::kTokenOutOfRange, 1);
  }
}

TEST_CASE("step violations carry their line numbers") {
  const std::string golden = serialize(read_trace(kGolden));
  auto lines = lines_of(golden);

  SUBCASE("truncated final line") {
    auto l = lines;
    l.pop_back();
    l.back().resize(l.back().size() / 2);
    expect_violation([&] { parse(join_lines(l)); }, TraceViolation::kMalformedRecord, 6);
  }
  SUBCASE("steps out of order") {
    auto t = read_trace(kGolden);
    t.steps[2].t = 7;
    expect_violation([&] { validate(t); }, TraceViolation::kStepOrder, 4);
  }
  SUBCASE("token outside the vocabulary") {
    auto t = read_trace(kGolden);
    t.steps[1].token = 99;
    expect_violation([&] { validate(t); }, TraceViolation::kTokenOutOfRange, 3);
  }
  SUBCASE("termination before the last step") {
    auto l = lines;
    l[2].replace(l[2].find("\"token\":14"), 10, "\"token\":0");
    expect_violation([&] { parse(join_lines(l)); }, TraceViolation::kEarlyTermination, 3);
  }
  SUBCASE("activation width") {
    auto t = read_trace(kGolden);
    t.steps[3].activations.push_back(1.0);
    expect_violation([&] { validate(t); }, TraceViolation::kActivationWidth, 5);
  }
  SUBCASE("non-finite activation") {
    auto t = read_trace(kGolden);
    t.steps[0].activations[1] = std::numeric_limits<double>::quiet_NaN();
    expect_violation([&] { validate(t); }, TraceViolation::kNonFinite, 2);
    CHECK_THROWS_AS(serialize(t), TraceError);
  }
}

TEST_CASE("snapshot violations") {
  SUBCASE("snapshot off the termination step") {
    auto t = read_trace(kGolden);
    t.snapshot->step = 4;
    expect_violation([&] { validate(t); }, TraceViolation::kSnapshotStep, 7);
  }
  SUBCASE("snapshot on a trace that never terminated") {
    auto t = read_trace(kGolden);
    t.steps.back().token = 17;
    expect_violation([&] { validate(t); }, TraceViolation::kSnapshotWithoutTermination, 7);
  }
  SUBCASE("raw snapshot with the wrong shape") {
    auto t = testing::planted_fixture().calibration.front().trace;
    auto raw = t.snapshot->raw();
    raw.pre_ffn.pop_back();
    t.snapshot->data = raw;
    expect_violation([&] { validate(t); }, TraceViolation::kSnapshotShape);
  }
  SUBCASE("scores and raw data together") {
    const std::string text = serialize(read_trace(kGolden));
    auto l = lines_of(text);
    l.back() = R"({"snapshot":{"step":5,"scores":[],"pre_ffn":[]}})";
    expect_violation([&] { parse(join_lines(l)); }, TraceViolation::kSnapshotShape, 7);
  }
  SUBCASE("record after the snapshot") {
    const std::string text = serialize(read_trace(kGolden));
    auto l = lines_of(text);
    l.push_back(R"({"t":6,"token":3,"act":[0,0,0]})");
    expect_violation([&] { parse(join_lines(l)); }, TraceViolation::kTrailingRecord, 8);
  }
  SUBCASE("duplicate scored neuron") {
    auto t = read_trace(kGolden);
    auto scores = t.snapshot->scores();
    scores.push_back(scores.front());
    t.snapshot->data = scores;
    expect_violation([&] { validate(t); }, TraceViolation::kDuplicateNeuron, 7);
  }
}

TEST_CASE("unknown keys are ignored and blank lines skipped") {
  std::string text = serialize(read_trace(kGolden));
  text.insert(text.find('\n') + 1, "\n");
  const auto t = parse(text);
  CHECK(t.length() == 5);
}
