#pragma once

#include <stdexcept>
#include <string>

namespace steerkit {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (empty prompt, fully masked
// attention row, mismatched list lengths, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not compose.
class DimensionError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

// Invalid model / module / run configuration.
class ConfigError : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

// A non-finite value was produced. Training maps this onto its divergence flag.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File missing, truncated or in an unknown format.
class IoError : public Error {
 public:
  using Error::Error;
};

#define STEERKIT_EXPECT(cond, ExcType, msg)                  \
  do {                                                       \
    if (!(cond)) throw ExcType(std::string(msg));            \
  } while (0)

}  // namespace steerkit
