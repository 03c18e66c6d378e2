#pragma once

#include <stdexcept>
#include <string>

namespace korr {

// Error taxonomy used across the project. The CLI maps each class to a
// distinct exit code.

// Bad user-supplied configuration: unknown keys, constraint violations,
// missing prerequisite artifacts.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch between conforming operands.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, rank deficiency beyond ridge rescue, divergence.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated an API precondition (stale cache, cross-episode pair,
// horizon past the trajectory end, ...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace korr
