#pragma once

#include <stdexcept>
#include <string>

namespace skh {

/// Caller violated a precondition (dimension mismatch, M < N, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A floating-point computation could not produce a trustworthy result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every particle received zero likelihood at time step `t`.
class DegenerateFilterError : public NumericalError {
 public:
  DegenerateFilterError(int t, const std::string& what)
      : NumericalError("degenerate filter at t=" + std::to_string(t) + ": " + what), t_(t) {}

  int time_step() const noexcept { return t_; }

 private:
  int t_;
};

/// Malformed experiment configuration; `line` is 0 when not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace skh
