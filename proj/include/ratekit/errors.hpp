#pragma once
#include <stdexcept>
#include <string>

namespace ratekit {

// Bad or inconsistent user input (config files, names, parameter ranges).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numerical procedure failed or its preconditions do not hold
// (non-convergence, singular systems, invalid matrices).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Not enough samples/records to produce the requested estimate.
class InsufficientDataError : public std::runtime_error {
 public:
  explicit InsufficientDataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ratekit
