#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace annred {

/// Input outside the domain of a transform or formula (e.g. a point off the annulus).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid problem or discretization parameters.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fields or operators living on incompatible grids.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller-side precondition was violated (unsorted sweep, nonzero boundary data, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Degenerate input: zero field, collapsed sign part, flat field.
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative method ran out of budget. Carries the last iterate (flattened
/// node values) and whatever residual history is meaningful to the caller.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate = {},
                   std::vector<double> residuals = {})
      : std::runtime_error(what),
        last_iterate_(std::move(last_iterate)),
        residuals_(std::move(residuals)) {}

  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
  const std::vector<double>& residuals() const noexcept { return residuals_; }

 private:
  std::vector<double> last_iterate_;
  std::vector<double> residuals_;
};

}  // namespace annred
