#pragma once

#include <stdexcept>
#include <string>

namespace evad {

// Exit codes used by the command-line front end.
enum class ExitCode : int { Ok = 0, Config = 2, Data = 3, Numeric = 4 };

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept { return ExitCode::Data; }
};

/// Conflicting or invalid entity/event type registrations.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files, unknown entities, invalid arguments on data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Parse failure with the offending line number attached.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::Config; }
};

/// Non-finite values or broken numerical invariants.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::Numeric; }
};

/// Lookups of windows / items that do not exist (triage service).
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// State-machine violations (triage service).
class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace evad
