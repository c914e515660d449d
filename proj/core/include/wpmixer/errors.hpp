#pragma once

#include <stdexcept>
#include <string>

namespace wpmixer {

// Base class for every error the library raises intentionally.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor rank/extent mismatches.
struct DimensionError : Error {
  using Error::Error;
};

// API preconditions violated (wrong call order, inconsistent arguments).
struct ContractError : Error {
  using Error::Error;
};

// Bad configuration values, unknown keys, unsupported enum members.
struct ConfigError : Error {
  using Error::Error;
};

// Files missing/unreadable/unwritable or malformed on disk.
struct IoError : Error {
  using Error::Error;
};

// Malformed dataset contents (unparsable cells, missing values).
struct DataError : Error {
  using Error::Error;
};

// Numerical failure: NaN/Inf in losses or gradients, divergence.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace wpmixer
