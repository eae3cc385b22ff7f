#pragma once

#include <stdexcept>
#include <string>

namespace cola {

// Base of every error raised by the toolkit. The CLI maps IoError to exit
// status 2 and all other kinds to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (taxonomy, manifest, config).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a contract: non-total mapping, unknown id,
// mismatched lengths or label sets.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Binary payload that does not follow its declared layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cola
