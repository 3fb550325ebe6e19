#pragma once

#include <stdexcept>
#include <string>

namespace swapwm {

// Caller broke a documented precondition (shape, range, emptiness).
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UnknownToken : std::out_of_range {
  explicit UnknownToken(const std::string& token)
      : std::out_of_range("unknown class token: '" + token + "'"), token(token) {}
  std::string token;
};

// Training or attack produced a non-finite loss or gradient.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Oracle answered with something that is not a probability vector over the queried classes.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};

struct CheckpointCorruptError : CheckpointError {
  using CheckpointError::CheckpointError;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

}  // namespace swapwm
