#pragma once

#include <stdexcept>
#include <string>

namespace secgain {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad call-site input: wrong dimensions, out-of-range parameters, malformed files.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A matrix argument that must be Schur stable is not (spectral radius >= 1).
class UnstableError : public Error {
 public:
  using Error::Error;
};

// A feasibility region turned out to be empty (reachable-set LMI, design threshold).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown: solver stall, near-singular factor, residual blow-up.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace secgain
