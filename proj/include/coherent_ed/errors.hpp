#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace coherent_ed {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An index is outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A record refers to something that does not exist (e.g. an unknown entity id).
class ReferenceError : public Error {
 public:
  using Error::Error;
};

/// A file or artifact could not be loaded.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Configuration schema violation; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace coherent_ed
