#pragma once

#include <stdexcept>
#include <string>

namespace loris {

// Shape or axis disagreement between operands.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Value outside the mathematical domain of an operation (ln of negative,
// division by zero, non-positive sigma).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// A precondition of an API contract was violated (non-scalar loss,
// unsorted beat list, empty batch).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (bin count < 2, indivisible lengths).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file contents (WAV chunks, pose JSON, checkpoint container).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input data too short / empty for the requested analysis.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace loris
