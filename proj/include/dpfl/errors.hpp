#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dpfl {

// Exit-code classes surfaced by the CLI: domain failures map to 1, I/O and
// schema failures map to 2.
enum class ErrorClass { kDomain = 1, kIo = 2 };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const { return class_; }
  int exit_code() const { return static_cast<int>(class_); }

 private:
  ErrorClass class_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorClass::kDomain, "dimension error: " + what) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what)
      : Error(ErrorClass::kDomain, "parameter error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorClass::kDomain, "config error: " + what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what)
      : Error(ErrorClass::kDomain, "input error: " + what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what)
      : Error(ErrorClass::kDomain, "usage error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorClass::kDomain, "numeric error: " + what) {}
};

class BudgetExceededError : public Error {
 public:
  BudgetExceededError(double epsilon, double ceiling, std::size_t step)
      : Error(ErrorClass::kDomain,
              "privacy budget exceeded at step " + std::to_string(step) +
                  ": epsilon " + std::to_string(epsilon) + " > ceiling " +
                  std::to_string(ceiling)),
        epsilon_(epsilon),
        step_(step) {}
  double epsilon() const { return epsilon_; }
  std::size_t step() const { return step_; }

 private:
  double epsilon_;
  std::size_t step_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(ErrorClass::kIo, "I/O error: " + what) {}
};

// A malformed record in an input file. `line` is 1-based.
class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : Error(ErrorClass::kIo,
              "schema error at line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class LabelError : public Error {
 public:
  LabelError(std::size_t line, const std::string& label)
      : Error(ErrorClass::kIo, "label error at line " + std::to_string(line) +
                                   ": unknown label '" + label + "'"),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what)
      : Error(ErrorClass::kIo, "checkpoint error: " + what) {}
};

}  // namespace dpfl
