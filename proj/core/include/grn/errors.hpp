#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace grn {

// Base for every error thrown by the library. Subclasses map onto the
// harness exit codes (config 2, numeric 3, I/O 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller-supplied argument violates an operation's contract.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A value lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// An integer index or category is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Cross-field or schema inconsistency in an experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated binary input; carries the offending byte offset.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : IoError(what + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(what),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }
  // Message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::uint64_t offset_;
};

}  // namespace grn
