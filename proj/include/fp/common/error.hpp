#pragma once

#include <stdexcept>
#include <string>

namespace fp {

/// Base class for all flowplan errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor dimension / shape contract violations.
struct ShapeError : Error {
  using Error::Error;
};

/// Invalid configuration values (bad keys, out-of-range settings).
struct ConfigError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required (NaN loss, diverged rollout).
struct NumericError : Error {
  using Error::Error;
};

/// File format / persistence failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fp
