#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evomoe {

// Base for every error raised by the library. Each subclass maps to one
// failure family so callers (notably the CLI) can translate to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain scalar argument (temperature, k, ratios, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Unreadable, truncated or checksum-mismatched artifact on disk.
class CorruptArtifactError : public Error {
 public:
  using Error::Error;
};

// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Broken internal contract (should never surface in correct use).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace evomoe
