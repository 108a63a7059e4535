#pragma once

#include <stdexcept>
#include <string>

namespace cmcdrop {

// Invalid configuration: dimension mismatches, bad hyperparameters,
// infeasible mask-bank requests, malformed config files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or divergence during numeric work.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File I/O and on-disk format problems.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cmcdrop
