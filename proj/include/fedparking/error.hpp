#pragma once

#include <stdexcept>
#include <string>

namespace fedparking {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file or field.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Tensor or vector shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Arguments outside an operation's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Configuration rejected by validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A training run produced non-finite parameters.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedparking
