#pragma once

#include <stdexcept>
#include <string>

namespace hienet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or parameter shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: malformed files, invalid labels, out-of-range arguments.
class DataError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant was violated (a bug, not bad input).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace hienet
