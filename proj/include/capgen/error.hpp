#pragma once

#include <stdexcept>
#include <string>

namespace capgen {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes incompatible with the requested operation.
struct DimensionError : Error {
  using Error::Error;
};

/// Input value outside the mathematical domain of an operation (e.g. log of
/// a non-positive number).
struct DomainError : Error {
  using Error::Error;
};

/// API misuse: a precondition that is the caller's responsibility was
/// violated (non-scalar loss in backward, second backward on one graph, ...).
struct ContractError : Error {
  using Error::Error;
};

/// Malformed or inconsistent external data (files, schemas, vocab hashes).
struct DataError : Error {
  using Error::Error;
};

/// Non-finite values or other numeric failures during computation.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace capgen
