#pragma once

#include <stdexcept>
#include <string>

namespace tulm {

// Process exit codes used by the command-line front end.
enum class ExitCode : int {
  kSuccess = 0,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
  virtual const char* kind() const noexcept = 0;
};

// Invalid configuration, missing paths, unknown names.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfigError; }
  const char* kind() const noexcept override { return "config_error"; }
};

// Malformed input files or violated data invariants.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kDataError; }
  const char* kind() const noexcept override { return "data_error"; }
};

// Factorization failures, NaN state, degenerate distributions.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumericError; }
  const char* kind() const noexcept override { return "numeric_error"; }
};

}  // namespace tulm
