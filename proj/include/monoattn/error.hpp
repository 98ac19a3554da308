// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace monoattn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid or contradictory configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Precondition on input values violated (masked rows, missing separators, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `line()` is 1-based; 0 when not line oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A numerical computation produced NaN or Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace monoattn
