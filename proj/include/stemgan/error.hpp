#pragma once

#include <stdexcept>
#include <string>

namespace stemgan {

// Base for every failure the toolkit raises on purpose. Callers that only
// care about "something went wrong" catch this; the CLI maps it to exit 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument to an operation (shape mismatch, out-of-range parameter).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent configuration (paths, config keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data that parsed but violates an invariant (label length, architecture).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed text input.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Image or video that cannot be decoded.
class DecodeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace stemgan
