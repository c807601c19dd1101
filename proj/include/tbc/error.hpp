#pragma once

#include <stdexcept>
#include <string>

namespace tbc {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image extents that do not satisfy an operation's contract.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Malformed files, unplaceable targets, missing inputs.
class DataError : public Error {
public:
  using Error::Error;
};

/// NaN/Inf produced where finite values are required.
class NumericalError : public Error {
public:
  using Error::Error;
};

}  // namespace tbc
