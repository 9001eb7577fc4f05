#pragma once

#include <stdexcept>
#include <string>

namespace slang {

/// Invalid user-supplied configuration or arguments (bad dimensions, ranks,
/// rates outside their domain, dense-path guards).
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A numerical operation failed on inputs that should have been valid:
/// a Cholesky factorization broke down, NaN/Inf contamination was detected,
/// or a positive-definiteness invariant was lost.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An optimizer produced a non-finite state. Runs that throw this are
/// flagged as diverged and excluded from aggregates.
struct divergence_error : numeric_error {
  using numeric_error::numeric_error;
};

/// Malformed input text. Carries the 1-based line number of the offense;
/// line 0 means the error is not tied to a particular line.
struct parse_error : std::runtime_error {
  parse_error(std::size_t line, const std::string& what)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_number(line) {}
  std::size_t line_number;
};

}  // namespace slang
