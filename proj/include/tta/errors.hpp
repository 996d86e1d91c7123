#pragma once

#include <stdexcept>
#include <string>

namespace tta {

// Error taxonomy. The CLI maps these onto process exit codes:
//   ConfigError / ContractError -> 2, NumericError / DivergenceError -> 3,
//   IoError -> 4.

// Shape mismatches, misaligned views, API misuse.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid experiment or adaptation configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric-domain violations: non-finite inputs, negative probabilities,
// zero-norm vectors fed to cosine.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Optimization produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tta
