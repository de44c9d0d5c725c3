// Error types shared across the library.  Everything thrown on purpose
// derives from rose::Error; the CLI maps the two subclasses to exit codes.
#pragma once

#include <stdexcept>
#include <string>

namespace rose {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input: bad file bytes, shape mismatches,
// incompatible artifacts, out-of-range values.
class DataError : public Error {
 public:
  using Error::Error;
};

// Numeric failure: non-finite values, training divergence, eigensolver
// breakdown.  NaN/Inf is never allowed to propagate silently.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rose
