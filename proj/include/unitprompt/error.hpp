#pragma once

#include <stdexcept>
#include <string>

namespace unitprompt {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or container shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Ids, indices, or arguments outside their valid domain.
class ValueError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf encountered where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Unreadable, truncated, or digest-mismatched files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Violated lifecycle contracts, e.g. tuning against an unfrozen backbone.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace unitprompt
