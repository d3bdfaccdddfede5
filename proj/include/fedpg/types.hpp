#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace fedpg {

/// Dense real vector used for policy parameters and gradient directions.
using Vector = Eigen::VectorXd;

/// Flat policy parameter vector theta (dimension d, shared by all agents).
using PolicyParams = Vector;

/// A d-vector gradient estimate or update direction.
using Direction = Vector;

/// Thrown when the arguments of an operation violate its preconditions.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when vector dimensions disagree.
class DimensionMismatch : public InvalidArgument {
 public:
  DimensionMismatch(const std::string& where, std::ptrdiff_t expected,
                    std::ptrdiff_t got)
      : InvalidArgument(where + ": dimension mismatch (expected " +
                        std::to_string(expected) + ", got " +
                        std::to_string(got) + ")") {}
};

/// Thrown when a numerical computation leaves the finite range.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when an oracle or operation is asked for something it cannot do.
class Unsupported : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

inline void require_dim(const char* where, std::ptrdiff_t expected,
                        std::ptrdiff_t got) {
  if (expected != got) throw DimensionMismatch(where, expected, got);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace fedpg
