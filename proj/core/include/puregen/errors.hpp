#pragma once

#include <stdexcept>
#include <string>

namespace puregen {

// Invalid configuration or shape contract. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or missing data files. CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or runaway training. CLI exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke an operation precondition (e.g. gradient of a non-scalar graph).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace puregen
