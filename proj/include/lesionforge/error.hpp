#pragma once

#include <stdexcept>
#include <string>

namespace lesionforge {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file content (bad magic, truncated header, bad JSON).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that uses a feature outside the supported subset.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Data that parses but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Caller passed an out-of-range or inconsistent argument.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Operation called without its required inputs (e.g. missing labels).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A callback (model) returned values outside its declared contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A statistic that is not defined for the given data (e.g. zero variance).
class UndefinedStatisticError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lesionforge
