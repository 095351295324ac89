#pragma once

#include <stdexcept>
#include <string>

namespace dqp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched vector or matrix sizes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration or invalid problem data.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Factorization breakdown, divergence, non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Dataset/checkpoint provenance checks failed (fingerprints, split overlap).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace dqp
