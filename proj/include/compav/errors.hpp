#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace compav {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad dimensions or non-finite values passed to an operation.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent file on disk.
class LoadError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad caller-provided data (e.g. non-finite target pixels).
class InputError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class AttachmentError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class OracleError : public Error {
 public:
  OracleError(const std::string& what, bool retryable = true)
      : Error(what), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

class UnsupportedCapability : public OracleError {
 public:
  explicit UnsupportedCapability(const std::string& capability)
      : OracleError("capability '" + capability + "' not supported by this oracle", false) {}
};

// Failure inside a multi-step stage; carries the step (e.g. view) index.
class StageError : public Error {
 public:
  StageError(const std::string& stage, std::optional<int> step, const std::string& what,
             const std::string& step_name = "step")
      : Error(stage + (step ? " " + step_name + " " + std::to_string(*step) : std::string()) + ": " + what),
        stage_(stage),
        step_(step) {}
  const std::string& stage() const { return stage_; }
  std::optional<int> step() const { return step_; }

 private:
  std::string stage_;
  std::optional<int> step_;
};

class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

}  // namespace compav
