// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lagcd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names both operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input that makes an operation undefined (empty tensor, zero-norm row, B < 2).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Synthetic data that cannot satisfy its spec (e.g. unreachable class separation).
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Raised by the training loop (non-finite loss), carries epoch/batch context.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace lagcd
