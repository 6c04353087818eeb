#pragma once

#include <stdexcept>
#include <string>

namespace mimicd {

// Bad input to an operation: shapes, ranges, non-finite values, config keys.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file content; the message carries line/record context.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A checkpoint or episode does not belong to the environment it is used with.
class BindingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Scripted expert could not satisfy a constraint within its retry budget.
class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& constraint, const std::string& detail)
      : std::runtime_error("expert generation failed [" + constraint + "]: " + detail),
        constraint_(constraint),
        detail_(detail) {}
  const std::string& constraint() const { return constraint_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string constraint_;
  std::string detail_;
};

// NaN/Inf met during sampling, training or a checked graph evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mimicd
