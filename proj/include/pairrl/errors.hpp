#pragma once

#include <stdexcept>
#include <string>

namespace pairrl {

// Shapes of operands are incompatible.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A NaN or Inf was produced or supplied.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint or file could not be parsed.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pairrl
