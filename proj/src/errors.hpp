#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dagkt {

// Error classes map one-to-one onto the status codes of the C API.

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LookupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor operator applied to incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training or evaluation failed at run time (divergence, I/O, provenance).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace dagkt
