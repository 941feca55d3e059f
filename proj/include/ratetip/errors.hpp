#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace ratetip {

namespace detail {
inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}
}  // namespace detail

/// Base class of every numerical failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Deterministic trajectory crossed the blow-up bound before t_final.
class DivergedBeforeFinalTime : public Error {
 public:
  explicit DivergedBeforeFinalTime(double t)
      : Error("trajectory diverged at t = " + std::to_string(t)), t_blowup(t) {}
  double t_blowup;
};

class BackwardIntegrationDiverged : public Error {
 public:
  explicit BackwardIntegrationDiverged(double t)
      : Error("backward integration diverged at t = " + std::to_string(t)), t_blowup(t) {}
  double t_blowup;
};

class BracketInvalid : public Error {
 public:
  using Error::Error;
};

class DegenerateDensity : public Error {
 public:
  using Error::Error;
};

class LinearSolveFailed : public Error {
 public:
  using Error::Error;
};

/// Density went negative beyond roundoff (scheme failure, not clipping).
class NegativeDensity : public Error {
 public:
  using Error::Error;
};

class ThresholdOutsideDomain : public Error {
 public:
  using Error::Error;
};

class ZeroMass : public Error {
 public:
  using Error::Error;
};

class ZeroVariance : public Error {
 public:
  using Error::Error;
};

class TooFewSurvivors : public Error {
 public:
  using Error::Error;
};

class NewtonDiverged : public Error {
 public:
  explicit NewtonDiverged(double residual)
      : Error("Newton iteration diverged, last residual " + detail::sci(residual)),
        last_residual(residual) {}
  double last_residual;
};

class SingularJacobian : public Error {
 public:
  using Error::Error;
};

class MaxIterations : public Error {
 public:
  explicit MaxIterations(double residual)
      : Error("Newton iteration limit reached, residual " + detail::sci(residual)),
        last_residual(residual) {}
  double last_residual;
};

class StepUnderflow : public Error {
 public:
  explicit StepUnderflow(double value)
      : Error("continuation step underflow at parameter value " + std::to_string(value)),
        param_value(value) {}
  double param_value;
};

class NoConvergedSeed : public Error {
 public:
  using Error::Error;
};

class MNotMaximal : public Error {
 public:
  using Error::Error;
};

class NoCrossing : public Error {
 public:
  using Error::Error;
};

class InsufficientPoints : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ratetip
