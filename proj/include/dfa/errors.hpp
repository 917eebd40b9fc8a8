#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dfa {

// Error hierarchy. Everything user-facing derives from Error so the CLI can
// map library failures to exit codes in one place.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument value (non-positive alpha, invalid layer index, ...).
struct ParameterError : Error {
  using Error::Error;
};

// Shape mismatch between tensors that must agree.
struct DimensionError : Error {
  using Error::Error;
};

// Orthogonality impossible: fewer dimensions than classes.
struct CapacityError : Error {
  using Error::Error;
};

// Zero-norm embedding where a direction is required.
struct DegenerateInputError : Error {
  using Error::Error;
};

// Non-finite values where finite math is required.
struct NumericError : Error {
  using Error::Error;
};

// Dataset file does not match its declared format.
struct FormatError : Error {
  FormatError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// Invalid run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Dataset content problem (empty class, label out of range, ...).
struct DataError : Error {
  using Error::Error;
};

// Malformed operation input (labels that are not probability vectors, ...).
struct InputError : Error {
  using Error::Error;
};

// Metric undefined for the given inputs (single-class F1 sweep, ...).
struct MetricError : Error {
  using Error::Error;
};

}  // namespace dfa
