#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evtraj {

/// Parameter outside the domain of a distribution (alpha <= 1, nu <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mismatched dimensions between related containers.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dataset or checkpoint content that cannot be used.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Schema violation while reading a line-oriented file. Carries the 1-based line.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Loss or parameter went non-finite during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace evtraj
