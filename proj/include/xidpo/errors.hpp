#pragma once

#include <stdexcept>
#include <string>

namespace xidpo {

// Every failure raised by the library derives from Error. The CLI maps the
// concrete type onto an exit-status class.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition of an operation (empty response, id out of range,
// beta <= 0, t outside [0, 1], ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input data that does not satisfy a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized input. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A pair whose ratio margin or odds are undefined (a == b == 0, or p == 1).
class DegeneratePairError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent configuration (missing ref, xi out of range, unknown keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Quantile-selected xi fell outside (0, 1].
class InvalidXiError : public Error {
 public:
  using Error::Error;
};

class EmptyDistributionError : public Error {
 public:
  using Error::Error;
};

}  // namespace xidpo
