#pragma once

#include <stdexcept>
#include <string>

namespace monoflow {

/// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A Cholesky pivot fell at or below the positive-definiteness threshold.
class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

/// A rescaling function was evaluated where its value is not representable.
class NumericOverflow : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

class NotMonotone : public Error {
 public:
  using Error::Error;
};

/// A convex-conjugate supremum diverges.
class Unbounded : public Error {
 public:
  using Error::Error;
};

/// Grid scan found its maximum on the bracket edge.
class NoInteriorMaximum : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace monoflow
