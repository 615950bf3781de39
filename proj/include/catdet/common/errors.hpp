#pragma once

#include <stdexcept>
#include <string>

namespace catdet {

// Shapes of two operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad configuration value or combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed, missing, or inconsistent input data on disk.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that a stage cannot process (e.g. an undersized image).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace catdet
