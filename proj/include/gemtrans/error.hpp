#pragma once

#include <stdexcept>
#include <string>

namespace gemtrans {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// More tokens than positional-embedding slots.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// The finite-difference oracle cannot be trusted (e.g. the loss is not deterministic).
class OracleError : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace gemtrans
