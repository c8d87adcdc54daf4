#pragma once

#include <stdexcept>
#include <string>

namespace epruner {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched tensor/matrix dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent architecture descriptor.
class DescriptorError : public Error {
 public:
  using Error::Error;
};

/// Malformed bundle file or I/O failure while reading/writing one.
class BundleError : public Error {
 public:
  using Error::Error;
};

/// Architecture, bundle and plan disagree with each other.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace epruner
