#pragma once

#include <stdexcept>
#include <string>

namespace pcagee {

/// Failure classes. The numeric values double as CLI exit codes.
enum class ErrorCategory { config = 1, data = 2, numerical = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

/// Malformed input text. `line()` is 1-based.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Duplicate keys, missing cells, incomplete rectangles.
class IntegrityError : public DataError {
 public:
  explicit IntegrityError(const std::string& what) : DataError(what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorCategory::numerical, what) {}
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public NumericalError {
 public:
  explicit DomainError(const std::string& what) : NumericalError(what) {}
};

/// Rank-0 input or an otherwise degenerate estimation problem.
class DegenerateError : public NumericalError {
 public:
  explicit DegenerateError(const std::string& what) : NumericalError(what) {}
};

/// Iteration limit reached before the coefficient change fell below tolerance.
class ConvergenceError : public NumericalError {
 public:
  explicit ConvergenceError(const std::string& what) : NumericalError(what) {}
};

}  // namespace pcagee
