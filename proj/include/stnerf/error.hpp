#pragma once

#include <stdexcept>
#include <string>

namespace stnerf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite or out-of-domain arguments.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Width/shape mismatch between tensors, tapes and parameters.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN/Inf.
class NumericFault : public Error {
 public:
  using Error::Error;
};

// Malformed file or document; the message names the file and field.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition (e.g. unsorted samples).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace stnerf
