#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace geoloc {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or invalid arguments (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a diverging loss (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " at line " + std::to_string(line) : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

}  // namespace geoloc
