#pragma once

#include <stdexcept>
#include <string>

namespace chai {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A ModelConfig (or a value derived from it) is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad user-level argument (k larger than the point count, empty curve, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// MHA was asked to run over a cache that has already been pruned.
class ModeMismatchError : public Error {
 public:
  using Error::Error;
};

// A trace does not cover the requested step window.
class InsufficientTraceError : public Error {
 public:
  using Error::Error;
};

// Missing profile, or a profile built for a different model.
class ProfileError : public Error {
 public:
  using Error::Error;
};

// Weight-file errors. Each failure mode is its own type.
class FormatError : public Error {
 public:
  using Error::Error;
};

class MagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class HeaderError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace chai
