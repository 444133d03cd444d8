#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nsk {

// Base of every diagnostic the toolchain raises. Line/column are 1-based;
// 0 means "not known at the throw site" and may be filled in by a caller
// that knows the source position.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message, int line = 0, int column = 0)
      : std::runtime_error(message), message_(message), line_(line), column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }
  const std::string& message() const noexcept { return message_; }

  void set_position(int line, int column = 0) {
    line_ = line;
    column_ = column;
  }

  // "line 3, column 7: message" (column omitted when unknown)
  std::string describe() const;

 private:
  std::string message_;
  int line_;
  int column_;
};

class LexError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, int line, int column,
             std::vector<std::string> expected = {})
      : Error(message, line, column), expected_(std::move(expected)) {}

  const std::vector<std::string>& expected() const noexcept { return expected_; }

 private:
  std::vector<std::string> expected_;
};

class RuntimeError : public Error {
 public:
  using Error::Error;
};

// Operand kinds that do not fit the operation (strong typing).
class TypeError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

class ShapeError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

class OutOfMemory : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

class LoadError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

}  // namespace nsk
