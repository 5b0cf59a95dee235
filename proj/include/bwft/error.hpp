#pragma once

#include <stdexcept>
#include <string>

namespace bwft {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid shapes, unknown names, bad indices or fractions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in activations, gradients or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API called out of order, e.g. backward before a train-mode forward.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or corrupted on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace bwft
