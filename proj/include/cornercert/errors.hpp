#pragma once

#include <stdexcept>
#include <string>

namespace cornercert {

// Input vector/matrix does not match the shape a network expects.
struct InputShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Activation or architecture outside what a routine supports.
struct UnsupportedError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid parameter combination (infeasible dataset spec, bad resolution, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Training diverged; carries the epoch at which the loss became non-finite.
struct TrainingFailure : std::runtime_error {
  int epoch;
  TrainingFailure(const std::string& msg, int epoch_)
      : std::runtime_error(msg), epoch(epoch_) {}
};

// Malformed input file; carries the 1-based line number where parsing stopped.
struct ParseError : std::runtime_error {
  int line;
  ParseError(const std::string& msg, int line_)
      : std::runtime_error(msg + " (line " + std::to_string(line_) + ")"), line(line_) {}
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cornercert
