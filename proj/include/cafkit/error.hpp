#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cafkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates an operation's precondition (non-finite, out of range, unnormalized).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Configuration rejected before any work is done.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. `offset()` is the byte offset into the offending line or buffer.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset, std::size_t line = 0)
      : Error(what), offset_(offset), line_(line) {}

  std::size_t offset() const noexcept { return offset_; }
  /// 1-based line number for multi-line inputs; 0 when not applicable.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t offset_;
  std::size_t line_;
};

/// Undecodable binary input (images).
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset) : Error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace cafkit
