#pragma once

#include <stdexcept>
#include <string>

namespace hazardfield {

// Invalid user input: bad config keys, malformed scenario, failed validation.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (e.g. Cholesky that cannot be repaired by jitter).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Adaptive quadrature did not reach the requested tolerance; carries the
// best available estimate and its error bound.
class QuadratureError : public std::runtime_error {
 public:
  QuadratureError(const std::string& msg, double estimate, double error_bound)
      : std::runtime_error(msg), estimate(estimate), error_bound(error_bound) {}
  double estimate;
  double error_bound;
};

// Sampler could not start or aborted (all-divergent warmup, bad init).
class SamplerError : public std::runtime_error {
 public:
  explicit SamplerError(const std::string& msg) : std::runtime_error(msg) {}
};

// File system / parsing problems.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hazardfield
