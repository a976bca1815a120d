#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace redsample {

/// Input violating an operation's precondition (shape mismatch, bad parameter).
class RejectedInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A denoiser call failed: plugin crash, malformed frame, or non-finite output.
class DenoiserFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A chain produced a non-finite state. Carries the offending iteration.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t iteration, const std::string& what)
      : std::runtime_error("divergence at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}

  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Series without variability (acf / iat of a constant chain).
class DegenerateSeries : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Step size outside the window where a convergence or bias bound is valid.
class BoundWindowError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Linear-Gaussian oracle could not be built (non-contractive recursion, singular precision).
class OracleError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace redsample
