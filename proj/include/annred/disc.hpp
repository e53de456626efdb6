#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "annred/errors.hpp"
#include "annred/grid.hpp"
#include "annred/params.hpp"

namespace annred {

using SparseRM = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SparseCM = Eigen::SparseMatrix<double>;

enum class MeasureKind { volume, volume_over_2rho, upstairs_volume };

inline const char* to_string(MeasureKind kind) {
  switch (kind) {
    case MeasureKind::volume: return "volume";
    case MeasureKind::volume_over_2rho: return "volume_over_2rho";
    case MeasureKind::upstairs_volume: return "upstairs_volume";
  }
  return "?";
}

/// One axis of the tensor-product scheme: dual-cell measures of the axis weight
/// and edge conductances. conductance[j] couples node j and j+1.
struct AxisStencil {
  std::vector<double> measure;
  std::vector<double> conductance;
  /// Relative mismatch of the closing pole row (0 for Dirichlet-ended axes).
  double closure_defect = 0.0;
};

/// Test function used to pin the conductances along one axis.
struct AxisProbe {
  std::function<double(double)> weight;
  std::function<double(double)> f;
  std::function<double(double)> df;
  std::function<double(double)> Lf;
  /// f(b) - f(a), written to avoid cancellation.
  std::function<double(double, double)> diff;
};

namespace detail {

inline double cell_integral(const std::function<double(double)>& w, double lo, double hi) {
  return boost::math::quadrature::gauss<double, 10>::integrate(w, lo, hi);
}

/// Flux recursion: choose c_{j+1/2} so the three-point row reproduces L f
/// exactly at every row. Rows at poles (natural boundary) start from zero flux;
/// Dirichlet ends start from the exact edge flux of f.
inline AxisStencil build_axis(const std::vector<double>& x, const std::vector<double>& edges,
                              const AxisProbe& probe, bool poles) {
  const int n = static_cast<int>(x.size());
  AxisStencil s;
  s.measure.resize(n);
  for (int j = 0; j < n; ++j) s.measure[j] = cell_integral(probe.weight, edges[j], edges[j + 1]);
  s.conductance.assign(n - 1, 0.0);
  std::vector<double> d(n - 1);
  for (int j = 0; j + 1 < n; ++j) d[j] = probe.diff(x[j], x[j + 1]);

  long double flux = 0.0L;  // c_{j-1/2} d_{j-1}
  int first = 0;
  if (!poles) {
    const double e = edges[1];
    s.conductance[0] = probe.weight(e) * probe.df(e) / d[0];
    flux = s.conductance[0] * d[0];
    first = 1;
  }
  for (int j = first; j + 1 < n; ++j) {
    if (!poles && j == n - 1) break;
    const long double next = static_cast<long double>(s.measure[j]) * probe.Lf(x[j]) + flux;
    s.conductance[j] = static_cast<double>(next / d[j]);
    flux = next;
  }
  if (poles) {
    const long double last = static_cast<long double>(s.measure[n - 1]) * probe.Lf(x[n - 1]) + flux;
    const long double scale = std::abs(s.measure[n - 1] * probe.Lf(x[n - 1])) + std::abs(flux);
    s.closure_defect = scale > 0 ? static_cast<double>(std::abs(last) / scale) : 0.0;
  }
  for (double c : s.conductance)
    if (!(c > 0.0) || !std::isfinite(c))
      throw ParameterError("axis stencil: nonpositive conductance; grid too coarse");
  return s;
}

inline double cos_diff(double a, double b) { return -2.0 * std::sin(0.5 * (a + b)) * std::sin(0.5 * (b - a)); }

}  // namespace detail

/// Radial stencil. Downstairs: weight rho^(N-1), pinned on f = rho.
/// Upstairs: weight r^(2m-1), pinned on f = r^2.
inline AxisStencil radial_stencil(const Grid& grid) {
  AxisProbe probe;
  if (grid.kind() == GridKind::reduced) {
    const int N = grid.dimension();
    probe.weight = [N](double x) { return std::pow(x, N - 1); };
    probe.f = [](double x) { return x; };
    probe.df = [](double) { return 1.0; };
    probe.Lf = [N](double x) { return (N - 1) / x; };
    probe.diff = [](double a, double b) { return b - a; };
  } else {
    const int m = grid.half_dimension();
    probe.weight = [m](double x) { return std::pow(x, 2 * m - 1); };
    probe.f = [](double x) { return x * x; };
    probe.df = [](double x) { return 2.0 * x; };
    probe.Lf = [m](double) { return 4.0 * m; };
    probe.diff = [](double a, double b) { return (b - a) * (b + a); };
  }
  return detail::build_axis(grid.radial_nodes(), grid.radial_edges(), probe, false);
}

/// Angular stencil. Downstairs: weight sin^(N-2)(phi), pinned on cos(phi).
/// Upstairs: weight cos^(m-1)sin^(m-1)(theta), pinned on cos(2 theta).
inline AxisStencil angular_stencil(const Grid& grid) {
  AxisProbe probe;
  if (grid.kind() == GridKind::reduced) {
    const int N = grid.dimension();
    probe.weight = [N](double x) { return std::pow(std::sin(x), N - 2); };
    probe.f = [](double x) { return std::cos(x); };
    probe.df = [](double x) { return -std::sin(x); };
    probe.Lf = [N](double x) { return -(N - 1.0) * std::cos(x); };
    probe.diff = [](double a, double b) { return detail::cos_diff(a, b); };
  } else {
    const int m = grid.half_dimension();
    probe.weight = [m](double x) { return std::pow(std::sin(x) * std::cos(x), m - 1); };
    probe.f = [](double x) { return std::cos(2.0 * x); };
    probe.df = [](double x) { return -2.0 * std::sin(2.0 * x); };
    probe.Lf = [m](double x) { return -4.0 * m * std::cos(2.0 * x); };
    probe.diff = [](double a, double b) { return detail::cos_diff(2.0 * a, 2.0 * b); };
  }
  return detail::build_axis(grid.angular_nodes(), grid.angular_edges(), probe, true);
}

/// Area factor of the suppressed angular directions: |S^(N-2)| downstairs,
/// |S^(m-1)|^2 upstairs.
inline double sphere_factor(const Grid& grid) {
  if (grid.kind() == GridKind::reduced) return sphere_area(grid.dimension() - 2);
  const double s = sphere_area(grid.half_dimension() - 1);
  return s * s;
}

/// Nodal quadrature weights. Nodes own exact dual-cell integrals of the
/// measure, so constants integrate to the true volume.
inline Eigen::VectorXd nodal_measure(const Grid& grid, MeasureKind kind) {
  const bool up = grid.kind() == GridKind::annulus;
  if (up != (kind == MeasureKind::upstairs_volume))
    throw ShapeError(std::string("measure ") + to_string(kind) + " does not live on a " +
                     to_string(grid.kind()) + " grid");
  const auto r = radial_stencil(grid);
  const auto a = angular_stencil(grid);
  const double S = sphere_factor(grid);
  Eigen::VectorXd w(grid.size());
  for (int i = 0; i < grid.n_radial(); ++i) {
    const double scale = kind == MeasureKind::volume_over_2rho ? 0.5 / grid.radial(i) : 1.0;
    for (int j = 0; j < grid.n_angular(); ++j)
      w[grid.index(i, j)] = S * r.measure[i] * a.measure[j] * scale;
  }
  return w;
}

inline double weighted_inner_product(const Field& f, const Field& g, MeasureKind kind) {
  f.require_same_grid(g, "weighted_inner_product");
  const auto w = nodal_measure(f.grid(), kind);
  return (f.values().array() * g.values().array() * w.array()).sum();
}

/// Sparse bilinear form with a nodal measure. Rows of Dirichlet nodes are
/// empty; rows of active nodes may reference boundary columns so that
/// nonhomogeneous data can be applied.
struct WeightedOperator {
  GridPtr grid;
  SparseRM form;
  Eigen::VectorXd weight;
  std::vector<int> active;
  bool self_adjoint = false;

  /// Diagonal part beyond the zero-row-sum coupling: form_ii = -sum_{j!=i} form_ij
  /// + weight_i * potential_i.
  Eigen::VectorXd potential;

  /// weight^-1 * form * f on active nodes, 0 on Dirichlet nodes. Evaluated in
  /// difference form so smooth data does not lose digits to cancellation.
  Field apply(const Field& f) const {
    if (!grid || !f.grid().same_as(*grid)) throw ShapeError("operator applied to field on another grid");
    const Eigen::VectorXd& x = f.values();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
    for (int k : active) {
      double acc = 0.0;
      for (SparseRM::InnerIterator it(form, k); it; ++it)
        if (it.col() != k) acc += it.value() * (x[it.col()] - x[k]);
      if (potential.size()) acc += weight[k] * potential[k] * x[k];
      out[k] = acc / weight[k];
    }
    return Field(grid, out);
  }

  /// Restriction of form to active x active (column-major, symmetric when self_adjoint).
  SparseCM active_block() const {
    const int n = grid->size();
    std::vector<int> pos(n, -1);
    for (std::size_t k = 0; k < active.size(); ++k) pos[active[k]] = static_cast<int>(k);
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(form.nonZeros());
    for (int row : active)
      for (SparseRM::InnerIterator it(form, row); it; ++it)
        if (pos[it.col()] >= 0) t.emplace_back(pos[row], pos[it.col()], it.value());
    SparseCM out(static_cast<int>(active.size()), static_cast<int>(active.size()));
    out.setFromTriplets(t.begin(), t.end());
    return out;
  }

  Eigen::VectorXd active_weight() const {
    Eigen::VectorXd w(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) w[k] = weight[active[k]];
    return w;
  }

  /// Gather / scatter between full nodal vectors and active unknowns.
  Eigen::VectorXd gather(const Eigen::VectorXd& full) const {
    Eigen::VectorXd x(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) x[k] = full[active[k]];
    return x;
  }
  Eigen::VectorXd scatter(const Eigen::VectorXd& x) const {
    Eigen::VectorXd full = Eigen::VectorXd::Zero(grid->size());
    for (std::size_t k = 0; k < active.size(); ++k) full[active[k]] = x[k];
    return full;
  }
};

inline std::vector<int> active_nodes(const Grid& grid) {
  std::vector<int> act;
  act.reserve((grid.n_radial() - 2) * grid.n_angular());
  for (int i = 1; i + 1 < grid.n_radial(); ++i)
    for (int j = 0; j < grid.n_angular(); ++j) act.push_back(grid.index(i, j));
  return act;
}

namespace detail {

/// Stiffness K with sum_j c (f_i - f_j)^2 structure; the Laplacian is -M^-1 K.
inline WeightedOperator assemble_laplacian(const GridPtr& gp) {
  const Grid& g = *gp;
  const auto rs = radial_stencil(g);
  const auto as = angular_stencil(g);
  const double S = sphere_factor(g);
  const int nr = g.n_radial(), na = g.n_angular();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(g.size()) * 5);
  for (int i = 1; i + 1 < nr; ++i) {
    const double x = g.radial(i);
    const double ang_scale = S * rs.measure[i] / (x * x);
    for (int j = 0; j < na; ++j) {
      const int row = g.index(i, j);
      double diag = 0.0;
      auto couple = [&](int col, double c) {
        t.emplace_back(row, col, c);  // form = -K, off-diagonals of K are -c
        diag += c;
      };
      couple(g.index(i - 1, j), S * rs.conductance[i - 1] * as.measure[j]);
      couple(g.index(i + 1, j), S * rs.conductance[i] * as.measure[j]);
      if (j > 0) couple(g.index(i, j - 1), ang_scale * as.conductance[j - 1]);
      if (j + 1 < na) couple(g.index(i, j + 1), ang_scale * as.conductance[j]);
      t.emplace_back(row, row, -diag);
    }
  }
  WeightedOperator op;
  op.grid = gp;
  op.form.resize(g.size(), g.size());
  op.form.setFromTriplets(t.begin(), t.end());
  op.form.makeCompressed();
  op.weight = nodal_measure(g, g.kind() == GridKind::reduced ? MeasureKind::volume
                                                             : MeasureKind::upstairs_volume);
  op.active = active_nodes(g);
  op.potential = Eigen::VectorXd::Zero(g.size());
  op.self_adjoint = true;
  return op;
}

}  // namespace detail

/// Delta_N for axially symmetric functions on the reduced grid, self-adjoint
/// with respect to the volume measure.
inline WeightedOperator assemble_axisym_laplacian(const GridPtr& grid, int N) {
  if (!grid) throw ShapeError("assemble_axisym_laplacian: null grid");
  if (N < 3) throw ParameterError("assemble_axisym_laplacian: N must be >= 3");
  if (grid->kind() != GridKind::reduced || grid->dimension() != N)
    throw ShapeError("assemble_axisym_laplacian: expected a reduced grid of dimension N");
  return detail::assemble_laplacian(grid);
}

/// Delta_{2m} for functions of (|y1|, |y2|) on the annulus grid.
inline WeightedOperator assemble_upstairs_laplacian(const GridPtr& grid, int m) {
  if (!grid) throw ShapeError("assemble_upstairs_laplacian: null grid");
  if (m < 2) throw ParameterError("assemble_upstairs_laplacian: m must be >= 2");
  if (grid->kind() != GridKind::annulus || grid->half_dimension() != m)
    throw ShapeError("assemble_upstairs_laplacian: expected an annulus grid with matching m");
  return detail::assemble_laplacian(grid);
}

// ---------------------------------------------------------------------------
// Fourth-order strong-form Laplacian, independent of the conservative scheme.
// Used to measure PDE residuals of discrete solutions.

/// Fornberg's finite-difference weights for derivatives 0..2 at x0.
inline std::array<std::vector<double>, 3> fd_weights(double x0, const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  constexpr int M = 2;
  std::vector<std::vector<std::vector<double>>> c(
      M + 1, std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)));
  c[0][0][0] = 1.0;
  double c1 = 1.0;
  for (int k = 1; k < n; ++k) {
    double c2 = 1.0;
    for (int v = 0; v < k; ++v) {
      const double c3 = x[k] - x[v];
      c2 *= c3;
      for (int d = std::min(k, M); d >= 0; --d) {
        c[d][k][v] = ((x[k] - x0) * c[d][k - 1][v] - (d > 0 ? d * c[d - 1][k - 1][v] : 0.0)) / c3;
      }
    }
    for (int d = std::min(k, M); d >= 0; --d) {
      c[d][k][k] = c1 / c2 *
                   ((d > 0 ? d * c[d - 1][k - 1][k - 1] : 0.0) - (x[k - 1] - x0) * c[d][k - 1][k - 1]);
    }
    c1 = c2;
  }
  std::array<std::vector<double>, 3> out;
  for (int d = 0; d <= M; ++d) out[d] = c[d][n - 1];
  return out;
}

/// Pointwise Laplacian of an axially symmetric (downstairs) or doubly radial
/// (upstairs) field, fourth order in the interior, poles by even reflection.
/// Dirichlet nodes get 0.
inline Field strong_laplacian(const Field& f) {
  const Grid& g = f.grid();
  const int nr = g.n_radial(), na = g.n_angular();
  const bool up = g.kind() == GridKind::annulus;
  const double radial_coef = up ? 2.0 * g.half_dimension() - 1.0 : g.dimension() - 1.0;
  const double k_ang = up ? g.half_dimension() - 1.0 : g.dimension() - 2.0;

  // Angular weights on a uniform grid; reflection maps ghost indices back.
  const double ha = g.angular(1) - g.angular(0);
  const auto aw = fd_weights(0.0, {-2 * ha, -ha, 0.0, ha, 2 * ha});
  auto reflect = [na](int j) {
    if (j < 0) return -j;
    if (j >= na) return 2 * (na - 1) - j;
    return j;
  };

  Field out(f.grid_ptr());
  for (int i = 1; i + 1 < nr; ++i) {
    const int lo = std::clamp(i - 2, 0, nr - 5);
    std::vector<double> xs(5);
    for (int q = 0; q < 5; ++q) xs[q] = g.radial(lo + q);
    const auto rw = fd_weights(g.radial(i), xs);
    const double x = g.radial(i);
    for (int j = 0; j < na; ++j) {
      double fr = 0, frr = 0, ft = 0, ftt = 0;
      for (int q = 0; q < 5; ++q) {
        const double val = f(lo + q, j);
        fr += rw[1][q] * val;
        frr += rw[2][q] * val;
      }
      for (int q = 0; q < 5; ++q) {
        const double val = f(i, reflect(j - 2 + q));
        ft += aw[1][q] * val;
        ftt += aw[2][q] * val;
      }
      double ang;
      if (j == 0 || j == na - 1) {
        ang = (1.0 + k_ang) * ftt;
      } else {
        const double t = g.angular(j);
        const double drift = up ? k_ang * (std::cos(t) / std::sin(t) - std::sin(t) / std::cos(t))
                                : k_ang * std::cos(t) / std::sin(t);
        ang = ftt + drift * ft;
      }
      out(i, j) = frr + radial_coef / x * fr + ang / (x * x);
    }
  }
  return out;
}

}  // namespace annred
