#pragma once

#include <stdexcept>
#include <string>

namespace ofo {

/// Inconsistent matrix/vector dimensions or invalid numeric arguments.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear solve hit a (numerically) singular matrix, e.g. s at a pole.
class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The requested operation is not defined for this function kind.
class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A parameter schedule or disturbance signal is undefined at the queried time.
class ScheduleError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// An iterative solver failed to reach its tolerance.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double residual, long iterations)
      : std::runtime_error(what), residual_(residual), iterations_(iterations) {}
  double residual() const noexcept { return residual_; }
  long iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  long iterations_;
};

}  // namespace ofo
