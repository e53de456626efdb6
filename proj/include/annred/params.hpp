#pragma once

#include <cmath>
#include <numbers>
#include <sstream>

#include "annred/errors.hpp"

namespace annred {

/// Surface area of the unit sphere S^k in R^(k+1). |S^0| = 2 (two points).
inline double sphere_area(int k) {
  if (k < 0) throw ParameterError("sphere_area: dimension must be nonnegative");
  const double n = k + 1.0;
  return 2.0 * std::pow(std::numbers::pi, n / 2.0) / std::tgamma(n / 2.0);
}

/// (m, a, b, p, lambda): annulus a < |x| < b in R^{2m}, nonlinearity |u|^{p-1}u,
/// linear coefficient lambda.
struct ProblemParams {
  int m = 2;
  double a = 1.0;
  double b = 2.0;
  double p = 3.0;
  double lambda = 100.0;

  /// Dimension of the reduced annulus D.
  int reduced_dimension() const noexcept { return m + 1; }
  int full_dimension() const noexcept { return 2 * m; }

  /// Upper bound on p: (N+2)/(N-2) with N = m+1.
  double critical_exponent() const noexcept {
    const double n = reduced_dimension();
    return (n + 2.0) / (n - 2.0);
  }

  void validate() const {
    std::ostringstream why;
    if (m < 2) why << "m must be >= 2 (got " << m << "); ";
    if (!(a > 0.0)) why << "a must be positive; ";
    if (!(a < b)) why << "need a < b; ";
    if (!(lambda > 0.0) || !std::isfinite(lambda)) why << "lambda must be positive and finite; ";
    if (!(p > 1.0)) why << "p must exceed 1; ";
    else if (m >= 2 && !(p < critical_exponent()))
      why << "p must be subcritical in dimension m+1 (p < " << critical_exponent() << "); ";
    const auto msg = why.str();
    if (!msg.empty()) throw ParameterError("invalid problem parameters: " + msg);
  }
};

/// D = {R1 < |z| < R2} in R^N, the image of A under the reduction.
struct ReducedDomain {
  double R1 = 0.5;
  double R2 = 2.0;
  int N = 3;

  static ReducedDomain from(const ProblemParams& params) {
    params.validate();
    return {0.5 * params.a * params.a, 0.5 * params.b * params.b, params.reduced_dimension()};
  }

  void validate() const {
    if (!(R1 > 0.0 && R1 < R2)) throw ParameterError("reduced domain needs 0 < R1 < R2");
    if (N < 3) throw ParameterError("reduced domain needs N >= 3");
  }
};

}  // namespace annred
