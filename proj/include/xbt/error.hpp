#pragma once

#include <stdexcept>
#include <string>

namespace xbt {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or inconsistent file content, or a failed read/write.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A value is outside the domain an operation accepts.
class ValueError : public Error {
 public:
  using Error::Error;
};

}  // namespace xbt
