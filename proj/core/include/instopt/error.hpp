#pragma once

#include <stdexcept>
#include <string>

namespace instopt {

enum class ErrorKind {
  validation,  // malformed input, bad configuration, violated precondition
  upstream,    // chat / embedding service failures
  infeasible,  // optimisation problem has no feasible point
  lookup,      // unknown variant, category, or id
  undefined,   // a quantity cannot be computed from the data (e.g. all cells skipped)
};

// Base exception for every failure raised by the library. `module` names the
// component that raised it so the CLI can report errors with context.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message)
      : std::runtime_error(message), kind_(kind), module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string module, const std::string& message)
      : Error(ErrorKind::validation, std::move(module), message) {}
};

class UpstreamError : public Error {
 public:
  UpstreamError(std::string module, const std::string& message,
                std::size_t completed = 0)
      : Error(ErrorKind::upstream, std::move(module), message),
        completed_(completed) {}

  // Number of items processed successfully before the failure.
  std::size_t completed() const noexcept { return completed_; }

 private:
  std::size_t completed_;
};

class InfeasibleError : public Error {
 public:
  InfeasibleError(std::string module, const std::string& message)
      : Error(ErrorKind::infeasible, std::move(module), message) {}
};

class LookupError : public Error {
 public:
  LookupError(std::string module, const std::string& message)
      : Error(ErrorKind::lookup, std::move(module), message) {}
};

class UndefinedResultError : public Error {
 public:
  UndefinedResultError(std::string module, const std::string& message,
                       std::size_t skipped)
      : Error(ErrorKind::undefined, std::move(module), message),
        skipped_(skipped) {}

  std::size_t skipped() const noexcept { return skipped_; }

 private:
  std::size_t skipped_;
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace instopt
