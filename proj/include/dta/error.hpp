#pragma once

#include <stdexcept>
#include <string>

namespace dta {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Incompatible tensor shapes; the message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument value outside its contract (k > L, rho out of range, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff record (non-scalar loss, spent record, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input data; carries the offending row when known.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what, long row = -1)
      : Error(what), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

}  // namespace dta
