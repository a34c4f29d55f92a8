#pragma once

#include <stdexcept>
#include <string>

namespace cmet {

/// Failure categories shared by the library and the CLI exit-code mapping.
enum class ErrorKind {
  // model language
  UnknownSpecies,
  DuplicateSpecies,
  MissingRate,
  NonPositiveRate,
  MalformedLine,
  // state space
  SpaceTooLarge,
  // tensors
  ShapeMismatch,
  DisconnectedGraph,
  // analysis
  SupportMismatch,
  DegenerateVariance,
  TimeIndexOutOfRange,
  // numerics
  UnstableStep,
  DivergedLoss,
  // persistence
  BadFormat,
  Io,
  InvalidArgument,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// True for failures of the numerical method itself rather than of the input.
  bool numerical() const noexcept {
    return kind_ == ErrorKind::UnstableStep || kind_ == ErrorKind::DivergedLoss;
  }

 private:
  ErrorKind kind_;
};

/// Parse error carrying the 1-based source line.
class ParseError : public Error {
 public:
  ParseError(ErrorKind kind, int line, const std::string& what)
      : Error(kind, "line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace cmet
