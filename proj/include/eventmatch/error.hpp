#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eventmatch {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not agree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad magic, unsupported version, truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Malformed record. `location` is a 1-based line for text input and a byte
// offset for binary input.
class ParseError : public FormatError {
 public:
  ParseError(const std::string& what, std::size_t location)
      : FormatError(what + " (at " + std::to_string(location) + ")"),
        location_(location) {}

  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

// Event outside the sensor or time window.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Precondition on a numeric argument violated (Z <= 0, empty window, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace eventmatch
