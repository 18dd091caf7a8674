#pragma once

#include <stdexcept>
#include <string>

namespace ofalab {

// Invalid configuration or usage: bad shapes, out-of-range knobs, unknown keys.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external data: bad magic, truncated file, size mismatch.
class DataFormatError : public std::runtime_error {
 public:
  explicit DataFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure: NaN/Inf surfaced by a check, diverged training.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Rejection sampling exhausted its try budget (names the offending bin).
class SamplingError : public std::runtime_error {
 public:
  explicit SamplingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ofalab
