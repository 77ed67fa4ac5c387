#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace conr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's documented precondition (shapes, ranges).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is invalid or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An operation that needs at least one element got an empty set.
class EmptySetError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DegenerateMeshError : public Error {
 public:
  using Error::Error;
};

/// Training loss stayed far above its initial value for too long.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `offset()` is a byte offset for binary formats and a
/// 1-based line number for text formats.
class ParseError : public Error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kTruncated, kTrailingData, kSyntax, kSchema, kMismatch };

  ParseError(Kind kind, std::size_t offset, const std::string& what)
      : Error(what), kind_(kind), offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

}  // namespace conr
