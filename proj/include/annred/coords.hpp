#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <vector>

#include "annred/disc.hpp"
#include "annred/errors.hpp"
#include "annred/grid.hpp"
#include "annred/params.hpp"

namespace annred {

/// (r, theta) on the annulus in R^{2m}: r = |y|, |y1| = r cos(theta), |y2| = r sin(theta).
struct PolarPoint2m {
  double r = 0.0;
  double theta = 0.0;
};

/// (rho, phi) on the reduced annulus in R^{m+1}: rho = |z|, phi the angle to the axis.
struct PolarPointD {
  double rho = 0.0;
  double phi = 0.0;
};

namespace detail {
constexpr double range_slack = 1e-12;

inline bool within(double x, double lo, double hi) {
  const double tol = range_slack * std::max({1.0, std::abs(lo), std::abs(hi)});
  return x >= lo - tol && x <= hi + tol;
}
}  // namespace detail

/// rho = r^2/2, phi = 2 theta.
inline PolarPointD reduce_point(const PolarPoint2m& pt, const ProblemParams& params) {
  if (!std::isfinite(pt.r) || !std::isfinite(pt.theta) || !detail::within(pt.r, params.a, params.b) ||
      !detail::within(pt.theta, 0.0, std::numbers::pi / 2))
    throw DomainError("reduce_point: point outside a <= r <= b, 0 <= theta <= pi/2");
  return {0.5 * pt.r * pt.r, 2.0 * pt.theta};
}

/// r = sqrt(2 rho), theta = phi/2.
inline PolarPoint2m lift_point(const PolarPointD& pt) {
  if (!(pt.rho > 0.0) || !std::isfinite(pt.rho)) throw DomainError("lift_point: rho must be positive");
  if (!detail::within(pt.phi, 0.0, std::numbers::pi)) throw DomainError("lift_point: phi outside [0, pi]");
  return {std::sqrt(2.0 * pt.rho), 0.5 * pt.phi};
}

inline PolarPoint2m lift_point(const PolarPointD& pt, const ProblemParams& params) {
  const auto dom = ReducedDomain::from(params);
  if (!detail::within(pt.rho, dom.R1, dom.R2))
    throw DomainError("lift_point: rho outside [a^2/2, b^2/2]");
  return lift_point(pt);
}

/// Image of a reduced grid under lift_point. Nodes and cell edges map
/// exactly, so fields transfer by relabeling.
inline GridPtr lift_grid(const GridPtr& reduced) {
  if (!reduced || reduced->kind() != GridKind::reduced)
    throw ShapeError("lift_grid: expected a reduced (rho, phi) grid");
  auto map_r = [](const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) out[k] = std::sqrt(2.0 * xs[k]);
    return out;
  };
  auto map_t = [](const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) out[k] = 0.5 * xs[k];
    return out;
  };
  return std::make_shared<const Grid>(GridKind::annulus, 2 * (reduced->dimension() - 1),
                                      map_r(reduced->radial_nodes()), map_t(reduced->angular_nodes()),
                                      map_r(reduced->radial_edges()), map_t(reduced->angular_edges()),
                                      reduced);
}

/// Inverse of lift_grid. Returns the original grid when the annulus grid came
/// from a lift.
inline GridPtr reduce_grid(const GridPtr& annulus) {
  if (!annulus || annulus->kind() != GridKind::annulus)
    throw ShapeError("reduce_grid: expected an annulus (r, theta) grid");
  if (annulus->source()) return annulus->source();
  auto map_r = [](const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) out[k] = 0.5 * xs[k] * xs[k];
    return out;
  };
  auto map_t = [](const std::vector<double>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) out[k] = 2.0 * xs[k];
    return out;
  };
  return std::make_shared<const Grid>(GridKind::reduced, annulus->half_dimension() + 1,
                                      map_r(annulus->radial_nodes()), map_t(annulus->angular_nodes()),
                                      map_r(annulus->radial_edges()), map_t(annulus->angular_edges()));
}

/// u(r, theta) = v(r^2/2, 2 theta) on the image grid.
inline Field lift_field(const Field& v) {
  if (v.empty() || v.grid().kind() != GridKind::reduced)
    throw ShapeError("lift_field: field must live on a reduced grid");
  return Field(lift_grid(v.grid_ptr()), v.values());
}

/// Reuses an already lifted grid (avoids rebuilding it per field).
inline Field lift_field(const Field& v, const GridPtr& annulus) {
  if (v.empty() || v.grid().kind() != GridKind::reduced)
    throw ShapeError("lift_field: field must live on a reduced grid");
  if (!annulus || annulus->kind() != GridKind::annulus || !annulus->source() ||
      !annulus->source()->same_as(v.grid()))
    throw ShapeError("lift_field: annulus grid is not the image of the field's grid");
  return Field(annulus, v.values());
}

inline Field reduce_field(const Field& u) {
  if (u.empty() || u.grid().kind() != GridKind::annulus)
    throw ShapeError("reduce_field: field must live on an annulus grid");
  return Field(reduce_grid(u.grid_ptr()), u.values());
}

struct IdentityCheck {
  double max_discrepancy = 0.0;
  int worst_i = -1;
  int worst_j = -1;
  /// max |Delta_2m u| over interior nodes, for scale.
  double max_upstairs = 0.0;
};

using UpstairsExpr = std::function<double(double r, double theta)>;
using LiftMap = std::function<PolarPoint2m(const PolarPointD&)>;

/// max over interior nodes of |Delta_2m u - 2 rho Delta_{m+1} v| with the
/// discrete operators. u is sampled on the lifted grid, v on the reduced grid
/// through `lift` (the exact map unless a test substitutes another).
inline IdentityCheck verify_laplacian_identity(
    const UpstairsExpr& u_expr, const GridPtr& grid, int m,
    const LiftMap& lift = [](const PolarPointD& pt) { return lift_point(pt); }) {
  if (!grid || grid->kind() != GridKind::reduced) throw ShapeError("verify: expected a reduced grid");
  if (grid->dimension() != m + 1) throw ShapeError("verify: grid dimension must be m+1");
  const auto up_grid = lift_grid(grid);
  const Field u = Field::sample(up_grid, u_expr);
  const Field v = Field::sample(grid, [&](double rho, double phi) {
    const auto q = lift({rho, phi});
    return u_expr(q.r, q.theta);
  });
  const auto lap_up = assemble_upstairs_laplacian(up_grid, m).apply(u);
  const auto lap_down = assemble_axisym_laplacian(grid, m + 1).apply(v);
  IdentityCheck out;
  for (int i = 1; i + 1 < grid->n_radial(); ++i)
    for (int j = 0; j < grid->n_angular(); ++j) {
      const double d = std::abs(lap_up(i, j) - 2.0 * grid->radial(i) * lap_down(i, j));
      out.max_upstairs = std::max(out.max_upstairs, std::abs(lap_up(i, j)));
      if (d > out.max_discrepancy || out.worst_i < 0) {
        out.max_discrepancy = d;
        out.worst_i = i;
        out.worst_j = j;
      }
    }
  return out;
}

}  // namespace annred
