#pragma once

#include <stdexcept>
#include <string>

namespace modalcompose {

// Every failure raised by the library derives from Error so callers (the CLI,
// the Python module) can catch one type and still switch on the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions disagree with what an operation or network expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared in a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values, unknown keys, unknown names.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or mismatched on-disk artifacts, and I/O failures.
class FileFormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace modalcompose
