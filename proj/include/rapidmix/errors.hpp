#pragma once

#include <stdexcept>
#include <string>

namespace rapidmix {

// Base class for all library failures. The CLI maps subclasses onto exit codes:
// config_error -> 2, resource_error -> 3, anything else -> 1.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad call-site input (wrong support, malformed region, invalid parameter).
class argument_error : public error {
 public:
  using error::error;
};

// Input outside the mathematical domain of the operation (singular state where
// full rank is required, log of a singular operator, negative sqrt, ...).
class domain_error : public error {
 public:
  using error::error;
};

// A numerical invariant failed after the fact (residual too large, lost
// Hermiticity, optimizer failed to converge).
class numeric_error : public error {
 public:
  using error::error;
};

// Region/graph geometry violates a precondition of the requested construction.
class geometry_error : public error {
 public:
  using error::error;
};

// The model lacks structure the algorithm needs (e.g. non-commuting potential
// fed to a decomposition that only exists for commuting ones).
class model_error : public error {
 public:
  using error::error;
};

// An eigenvalue cluster is not separated well enough to split reliably.
class conditioning_error : public error {
 public:
  using error::error;
};

// Requested computation exceeds a hard size cap. Never downgraded silently.
class resource_error : public error {
 public:
  using error::error;
};

// Malformed configuration (unknown key, type mismatch, missing field).
class config_error : public error {
 public:
  using error::error;
};

// No covering schedule exists at the requested distance; carries the smallest
// segment length that would admit one.
class schedule_error : public error {
 public:
  schedule_error(const std::string& msg, int minimal_length)
      : error(msg), minimal_length(minimal_length) {}
  int minimal_length;
};

}  // namespace rapidmix
