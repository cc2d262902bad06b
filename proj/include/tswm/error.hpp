#pragma once

#include <stdexcept>
#include <string>

namespace tswm {

/// Invalid construction parameters or configuration values.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A well-formed call received arguments outside its domain.
class InputError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse, e.g. a stale forward cache or mismatched provenance.
class UsageError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Degenerate numerics (zero variance, NaN gradients, divergence).
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Curve fitting failed for every candidate family.
class FitError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace tswm
