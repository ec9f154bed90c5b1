#pragma once

#include <stdexcept>
#include <string>

namespace hbda {

/// Invalid experiment or sampler configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solver blow-up, non-positive innovation variance and similar failures
/// (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hbda
