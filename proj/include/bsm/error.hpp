#pragma once

#include <stdexcept>
#include <string>

namespace bsm {

// Base for all toolkit errors. CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad run configuration: missing files, malformed config, invalid flags.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Malformed or inconsistent input data (schema violations, misaligned
// prompt sets, degenerate inputs a metric cannot accept).
class DataError : public Error {
public:
  using Error::Error;
};

}  // namespace bsm
