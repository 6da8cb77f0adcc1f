#pragma once

#include <stdexcept>
#include <string>

namespace mirec {

// Base class for every error raised by the library. Callers that only need
// a diagnostic can catch this; the subclasses exist for tests and for the
// CLI, which maps them onto stage-named messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. The message carries the path and line number.
class FormatError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class EmptyDataError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch)
      : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage found that an upstream artifact is missing.
class MissingArtifactError : public Error {
 public:
  MissingArtifactError(const std::string& what, std::string stage)
      : Error(what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace mirec
