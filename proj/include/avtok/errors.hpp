#pragma once

#include <stdexcept>
#include <string>

namespace avtok {

/// Bad inputs: contract violations, shape mismatches, malformed requests.
/// Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failures: non-finite values, divergence, singular fits.
/// Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File-format failures: bad magic, version mismatch, truncation, checksum.
/// Maps to CLI exit code 4.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace avtok
