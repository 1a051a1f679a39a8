#pragma once

#include <stdexcept>
#include <string>

namespace ambireg {

// Invalid argument or shape/dimension mismatch.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration (unknown key, out-of-range value, degenerate camera).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite value or singular matrix encountered during computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged. checkpoint() names the dump written before throwing, if any.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& msg, std::string checkpoint = {})
      : std::runtime_error(msg), checkpoint_(std::move(checkpoint)) {}

  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::string checkpoint_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ambireg
