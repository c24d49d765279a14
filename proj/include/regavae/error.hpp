#pragma once

#include <stdexcept>
#include <string>

namespace regavae {

// Error hierarchy. The CLI maps InputError -> exit 1 and NumericError -> exit 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (non-scalar loss, wrong layer count, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A result would contain NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing user data.
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Zero-norm vectors in a similarity, empty database on query.
class RetrievalError : public Error {
 public:
  using Error::Error;
};

}  // namespace regavae
