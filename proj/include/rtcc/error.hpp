#pragma once

#include <stdexcept>
#include <string>

namespace rtcc {

// Base of every error thrown by the library. The CLI maps UsageError to exit
// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid architecture/convolution/training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor dimensions that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-range input data (files, annotations, scenes).
class InputError : public Error {
 public:
  using Error::Error;
};

// API misuse: backward on a non-scalar, missing gradients, bad CLI flags.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Metric evaluation outside its domain (zero prediction in NAE, AES pole).
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace rtcc
