#pragma once

#include <stdexcept>
#include <string>

namespace neat {

/// Failure categories shared by every module. The C API maps each one to a
/// distinct status code, and the CLI maps them onto process exit codes.
enum class ErrorKind {
  kDimension,          // invalid ModelDims
  kVocabulary,         // token id >= V
  kFormat,             // bad magic / unsupported version / unparsable record
  kValidation,         // well-formed but violates a documented invariant
  kCoverage,           // a requested neuron is not monitored by a trace
  kCompatibility,      // neuron set / trace / model disagree on dims
  kPath,               // importance requested from a snapshot without raw data
  kCalibrationInput,   // calibration set contains an unusable trace
  kNoSignal,           // every candidate list came back empty
  kIo,                 // filesystem failure
  kInvalidArgument,    // caller supplied an out-of-range parameter
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Validation error that remembers the 1-based line it was raised on.
class LineError : public Error {
 public:
  LineError(ErrorKind kind, std::size_t line, const std::string& what)
      : Error(kind, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace neat
