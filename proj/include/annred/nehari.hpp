#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "annred/disc.hpp"
#include "annred/errors.hpp"
#include "annred/grid.hpp"
#include "annred/params.hpp"

namespace annred {

struct EnergyBreakdown {
  double dirichlet = 0.0;
  double mass = 0.0;
  double power = 0.0;
  double total = 0.0;
};

enum class SolutionKind { positive, nodal };

inline const char* to_string(SolutionKind k) { return k == SolutionKind::positive ? "positive" : "nodal"; }

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 50000;
  /// Hand over to Newton once the relative gradient norm drops below this.
  double newton_switch = 1e-3;
  int newton_max = 60;
  double armijo = 1e-4;
  /// Start near the outer sphere instead of the inner one.
  bool outer_init = false;
};

struct SolveOutcome {
  Field field;
  EnergyBreakdown energy;
  double residual_norm = 0.0;
  int iterations = 0;
  int newton_steps = 0;
  bool converged = false;
  SolutionKind kind = SolutionKind::positive;
  /// J along accepted Nehari-projected iterates.
  std::vector<double> energy_history;
  /// Relative Nehari defects <J'(v), v+> and <J'(v), v-> (nodal only for the second).
  double nehari_defect_plus = 0.0;
  double nehari_defect_minus = 0.0;
};

/// Discrete reduced problem on one grid:
///   J(v) = 1/2 v'Kv + sum w2 (lambda v^2/2 - |v|^(p+1)/(p+1)),  w2 = vol/(2 rho).
class ReducedProblem {
 public:
  ReducedProblem(const ProblemParams& params, GridPtr grid) : params_(params), grid_(std::move(grid)) {
    params_.validate();
    if (!grid_ || grid_->kind() != GridKind::reduced) throw ShapeError("reduced problem needs a reduced grid");
    if (grid_->dimension() != params_.reduced_dimension())
      throw ShapeError("grid dimension does not match m+1");
    const auto dom = ReducedDomain::from(params_);
    const double tol = 1e-12 * dom.R2;
    if (std::abs(grid_->inner_radius() - dom.R1) > tol || std::abs(grid_->outer_radius() - dom.R2) > tol)
      throw ShapeError("grid radii do not match a^2/2, b^2/2");
    lap_ = assemble_axisym_laplacian(grid_, params_.reduced_dimension());
    w_ = lap_.weight;
    inv2rho_.resize(grid_->size());
    for (int i = 0; i < grid_->n_radial(); ++i)
      for (int j = 0; j < grid_->n_angular(); ++j) inv2rho_[grid_->index(i, j)] = 0.5 / grid_->radial(i);
    w2_ = (w_.array() * inv2rho_.array()).matrix();
  }

  const ProblemParams& params() const noexcept { return params_; }
  const GridPtr& grid() const noexcept { return grid_; }
  const WeightedOperator& laplacian() const noexcept { return lap_; }
  const Eigen::VectorXd& volume() const noexcept { return w_; }
  const Eigen::VectorXd& volume_over_2rho() const noexcept { return w2_; }
  const Eigen::VectorXd& inv_2rho() const noexcept { return inv2rho_; }

  void require_dirichlet(const Field& v) const {
    if (!v.grid().same_as(*grid_)) throw ShapeError("field is not on the problem grid");
    if (!v.all_finite()) throw ContractError("field has non-finite values");
    for (int j = 0; j < grid_->n_angular(); ++j)
      if (v(0, j) != 0.0 || v(grid_->n_radial() - 1, j) != 0.0)
        throw ContractError("field must vanish on the Dirichlet boundary");
  }

  /// v'Kv (= integral of |grad v|^2).
  double stiffness(const Eigen::VectorXd& x) const { return -x.dot(lap_.form * x); }
  double cross_stiffness(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return -x.dot(lap_.form * y);
  }

  EnergyBreakdown energy(const Field& v) const {
    require_dirichlet(v);
    return energy_of(v.values());
  }

  EnergyBreakdown energy_of(const Eigen::VectorXd& x) const {
    const double p = params_.p;
    EnergyBreakdown e;
    e.dirichlet = 0.5 * std::max(0.0, stiffness(x));
    e.mass = 0.5 * params_.lambda * (w2_.array() * x.array().square()).sum();
    e.power = (w2_.array() * x.array().abs().pow(p + 1.0)).sum() / (p + 1.0);
    e.total = e.dirichlet + e.mass - e.power;
    return e;
  }

  /// Coefficient-space gradient: Kx + w2 (lambda x - |x|^(p-1) x), zero on Dirichlet nodes.
  Eigen::VectorXd euclidean_gradient(const Eigen::VectorXd& x) const {
    const double p = params_.p, lam = params_.lambda;
    Eigen::VectorXd g = -(lap_.form * x);
    for (int k : lap_.active) {
      const double xv = x[k];
      g[k] += w2_[k] * (lam * xv - std::pow(std::abs(xv), p - 1.0) * xv);
    }
    for (int k = 0; k < g.size(); ++k)
      if (grid_->is_dirichlet(k / grid_->n_angular())) g[k] = 0.0;
    return g;
  }

  /// Riesz representative in the volume inner product:
  /// -Delta v + (lambda v - |v|^(p-1) v)/(2 rho).
  Field gradient(const Field& v) const {
    require_dirichlet(v);
    const double p = params_.p, lam = params_.lambda;
    Field lap = lap_.apply(v);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(grid_->size());
    for (int k : lap_.active) {
      const double xv = v.values()[k];
      g[k] = -lap.values()[k] + inv2rho_[k] * (lam * xv - std::pow(std::abs(xv), p - 1.0) * xv);
    }
    return Field(grid_, g);
  }

  double weighted_norm(const Eigen::VectorXd& g) const {
    return std::sqrt((w_.array() * g.array().square()).sum());
  }

  double residual_norm(const Field& v) const { return weighted_norm(gradient(v).values()); }

  /// Quadratic and power parts of <J'(v), v>.
  std::pair<double, double> nehari_parts(const Eigen::VectorXd& x) const {
    const double a = stiffness(x) + params_.lambda * (w2_.array() * x.array().square()).sum();
    const double b = (w2_.array() * x.array().abs().pow(params_.p + 1.0)).sum();
    return {a, b};
  }

  /// t* with <J'(t* v), t* v> = 0.
  std::pair<double, Field> nehari_project(const Field& v) const {
    require_dirichlet(v);
    const auto [a, b] = nehari_parts(v.values());
    if (!(b > 0.0)) throw DegenerateError("nehari_project: zero field");
    const double t = std::pow(a / b, 1.0 / (params_.p - 1.0));
    return {t, Field(grid_, t * v.values())};
  }

  /// <J'(v), v> / (v'Kv + lambda int v^2/(2 rho)).
  double nehari_defect(const Eigen::VectorXd& x) const {
    const auto [a, b] = nehari_parts(x);
    return a > 0 ? (a - b) / a : 0.0;
  }

  /// Relative <J'(v), v^+> and <J'(v), v^->.
  std::pair<double, double> nodal_defects(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd g = euclidean_gradient(x);
    const Eigen::VectorXd xp = x.cwiseMax(0.0), xm = x.cwiseMin(0.0);
    auto rel = [&](const Eigen::VectorXd& part) {
      const double a = nehari_parts(part).first;
      return a > 0 ? g.dot(part) / a : 0.0;
    };
    return {rel(xp), rel(xm)};
  }

  /// Scales v^+ and v^- independently so both lie on the Nehari manifold,
  /// accounting for the discrete coupling v+'Kv- between them.
  Eigen::VectorXd nodal_project(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd xp = x.cwiseMax(0.0), xm = x.cwiseMin(0.0);
    const auto [ap, bp] = nehari_parts(xp);
    const auto [am, bm] = nehari_parts(xm);
    if (!(bp > 0.0) || !(bm > 0.0)) throw DegenerateError("nodal_project: a sign part vanished");
    const double c = cross_stiffness(xp, xm);
    const double q = params_.p - 1.0;
    // s ap + t c = s^p bp,  t am + s c = t^p bm
    double s = std::pow(ap / bp, 1.0 / q), t = std::pow(am / bm, 1.0 / q);
    for (int it = 0; it < 100; ++it) {
      const double f1 = s * ap + t * c - std::pow(s, params_.p) * bp;
      const double f2 = t * am + s * c - std::pow(t, params_.p) * bm;
      const double j11 = ap - params_.p * std::pow(s, q) * bp, j12 = c;
      const double j21 = c, j22 = am - params_.p * std::pow(t, q) * bm;
      const double det = j11 * j22 - j12 * j21;
      if (det == 0.0 || !std::isfinite(det)) break;
      double ds = -(f1 * j22 - j12 * f2) / det, dt = -(j11 * f2 - f1 * j21) / det;
      double step = 1.0;
      while ((s + step * ds <= 0.0 || t + step * dt <= 0.0) && step > 1e-6) step *= 0.5;
      s += step * ds;
      t += step * dt;
      if (std::abs(ds) <= 1e-15 * s && std::abs(dt) <= 1e-15 * t) break;
    }
    if (!(s > 0.0) || !(t > 0.0) || !std::isfinite(s) || !std::isfinite(t))
      throw DegenerateError("nodal_project: no positive scaling pair");
    return s * xp + t * xm;
  }

  /// Linearization K + diag(w2 (lambda - p |x|^(p-1))) on active unknowns.
  SparseCM hessian_active(const Eigen::VectorXd& x) const {
    SparseCM H = lap_.active_block();
    H *= -1.0;
    for (std::size_t k = 0; k < lap_.active.size(); ++k) {
      const int n = lap_.active[k];
      H.coeffRef(k, k) += w2_[n] * (params_.lambda - params_.p * std::pow(std::abs(x[n]), params_.p - 1.0));
    }
    return H;
  }

  /// Sobolev metric K + diag(w2 lambda), SPD.
  SparseCM metric_active() const {
    SparseCM H = lap_.active_block();
    H *= -1.0;
    for (std::size_t k = 0; k < lap_.active.size(); ++k) {
      const int n = lap_.active[k];
      H.coeffRef(k, k) += w2_[n] * params_.lambda;
    }
    return H;
  }

  /// Gaussian in R^N centered on the axis at radius rc, times (rho-R1)(R2-rho).
  Field bump(double rc, double phi_c) const {
    const double lam = params_.lambda;
    const double sigma = std::max(2.0 * grid_->radial_spacing(), std::sqrt(2.0 * rc / lam));
    const double R1 = grid_->inner_radius(), R2 = grid_->outer_radius();
    Field f = Field::sample(grid_, [&](double rho, double phi) {
      const double d2 = rho * rho + rc * rc - 2.0 * rho * rc * std::cos(phi - phi_c);
      return std::exp(-0.5 * d2 / (sigma * sigma)) * (rho - R1) * (R2 - rho);
    });
    for (int j = 0; j < grid_->n_angular(); ++j) {
      f(0, j) = 0.0;
      f(grid_->n_radial() - 1, j) = 0.0;
    }
    return f;
  }

  Field default_init(SolutionKind kind, bool outer) const {
    const double R1 = grid_->inner_radius(), R2 = grid_->outer_radius();
    const double rc = outer ? R2 - 0.1 * (R2 - R1) : R1 + 0.1 * (R2 - R1);
    Field f = bump(rc, 0.0);
    if (kind == SolutionKind::nodal) f.values() -= bump(rc, std::numbers::pi).values();
    return f;
  }

 private:
  ProblemParams params_;
  GridPtr grid_;
  WeightedOperator lap_;
  Eigen::VectorXd w_;
  Eigen::VectorXd w2_;
  Eigen::VectorXd inv2rho_;
};

/// Number of connected sign components ({v > eps} and {v < -eps}, 4-neighbour
/// connectivity on the node lattice), eps = 1e-10 max|v|.
inline int count_nodal_regions(const Field& v) {
  const Grid& g = v.grid();
  const double eps = 1e-10 * v.values().cwiseAbs().maxCoeff();
  std::vector<int> sign(g.size(), 0);
  for (int k = 0; k < g.size(); ++k) sign[k] = v.values()[k] > eps ? 1 : (v.values()[k] < -eps ? -1 : 0);
  std::vector<char> seen(g.size(), 0);
  int regions = 0;
  for (int start = 0; start < g.size(); ++start) {
    if (!sign[start] || seen[start]) continue;
    ++regions;
    std::queue<int> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const int k = q.front();
      q.pop();
      const int i = k / g.n_angular(), j = k % g.n_angular();
      const int nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
      for (auto& ij : nb) {
        if (ij[0] < 0 || ij[0] >= g.n_radial() || ij[1] < 0 || ij[1] >= g.n_angular()) continue;
        const int n = g.index(ij[0], ij[1]);
        if (!seen[n] && sign[n] == sign[start]) {
          seen[n] = 1;
          q.push(n);
        }
      }
    }
  }
  return regions;
}

/// Reflect phi -> pi - phi.
inline Field reflect_axis(const Field& v) {
  const Grid& g = v.grid();
  Field out(v.grid_ptr());
  for (int i = 0; i < g.n_radial(); ++i)
    for (int j = 0; j < g.n_angular(); ++j) out(i, j) = v(i, g.n_angular() - 1 - j);
  return out;
}

/// Puts the maximum of v in the half phi < pi/2 (ties: smallest rho, then phi).
inline Field align_axis(const Field& v) {
  const Grid& g = v.grid();
  double best = -std::numeric_limits<double>::infinity();
  int bj = 0;
  for (int i = 0; i < g.n_radial(); ++i)
    for (int j = 0; j < g.n_angular(); ++j)
      if (v(i, j) > best) {
        best = v(i, j);
        bj = j;
      }
  return 2 * bj > g.n_angular() - 1 ? reflect_axis(v) : v;
}

/// Largest increase of v along phi: max over (i, j) of v(i, j+1) - v(i, j).
inline double monotonicity_violation(const Field& v) {
  const Grid& g = v.grid();
  double worst = 0.0;
  for (int i = 0; i < g.n_radial(); ++i)
    for (int j = 0; j + 1 < g.n_angular(); ++j) worst = std::max(worst, v(i, j + 1) - v(i, j));
  return worst;
}

namespace detail {

struct ActiveSolver {
  Eigen::SimplicialLDLT<SparseCM> ldlt;
  Eigen::SparseLU<SparseCM> lu;
  bool use_lu = false;
  bool ok = false;

  void factor(const SparseCM& A) {
    ldlt.compute(A);
    use_lu = ldlt.info() != Eigen::Success;
    if (!use_lu) {
      const auto& d = ldlt.vectorD();
      use_lu = !(d.array().abs() > 1e-300).all() || !d.allFinite();
    }
    if (use_lu) {
      lu.compute(A);
      ok = lu.info() == Eigen::Success;
    } else {
      ok = true;
    }
  }
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    if (use_lu) return lu.solve(b);
    return ldlt.solve(b);
  }
};

/// Newton iteration on the discrete equation from x. Returns the polished
/// vector when the weighted residual reaches tol, nullopt otherwise.
inline std::optional<Eigen::VectorXd> newton_polish(const ReducedProblem& prob, Eigen::VectorXd x,
                                                    const SolverOptions& opt, int& steps) {
  const auto& op = prob.laplacian();
  const Eigen::VectorXd& w = prob.volume();
  auto resid = [&](const Eigen::VectorXd& y) {
    const Eigen::VectorXd g = prob.euclidean_gradient(y);
    return std::sqrt((g.array().square() / w.array()).sum());
  };
  double r = resid(x);
  const double target = 1e-3 * opt.tol;
  for (int it = 0; it < opt.newton_max; ++it) {
    if (r <= target) return x;
    ++steps;
    ActiveSolver solver;
    solver.factor(prob.hessian_active(x));
    if (!solver.ok) return std::nullopt;
    const Eigen::VectorXd g = op.gather(prob.euclidean_gradient(x));
    const Eigen::VectorXd dx = op.scatter(-solver.solve(g));
    if (!dx.allFinite()) return std::nullopt;
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      const Eigen::VectorXd y = x + step * dx;
      const double ry = resid(y);
      if (ry < (1.0 - 1e-4 * step) * r || ry <= target) {
        x = y;
        r = ry;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) return r <= opt.tol ? std::optional<Eigen::VectorXd>(x) : std::nullopt;
  }
  if (r <= opt.tol) return x;
  return std::nullopt;
}

}  // namespace detail

/// Nehari-constrained descent: L-BFGS directions preconditioned by the
/// Sobolev metric K + lambda/(2 rho), retraction by Nehari scaling, Armijo
/// backtracking, then Newton once the gradient is small.
inline SolveOutcome solve_on_nehari(const ReducedProblem& prob, SolutionKind kind,
                                    const std::optional<Field>& init, const SolverOptions& opt) {
  if (!(opt.tol > 0.0) || opt.max_iter < 1) throw ParameterError("solver options: tol > 0, max_iter >= 1");
  const auto& op = prob.laplacian();
  const bool nodal = kind == SolutionKind::nodal;

  Field start = init ? *init : prob.default_init(kind, opt.outer_init);
  prob.require_dirichlet(start);
  auto project = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
    if (nodal) return prob.nodal_project(y);
    const Eigen::VectorXd a = y.cwiseAbs();
    const auto [qa, qb] = prob.nehari_parts(a);
    if (!(qb > 0.0)) throw DegenerateError("positive descent: iterate vanished");
    return std::pow(qa / qb, 1.0 / (prob.params().p - 1.0)) * a;
  };
  auto energy = [&](const Eigen::VectorXd& y) { return prob.energy_of(y).total; };

  Eigen::VectorXd x = project(start.values());
  double J = energy(x);

  Eigen::SimplicialLLT<SparseCM> metric(prob.metric_active());
  if (metric.info() != Eigen::Success) throw ConvergenceError("Sobolev metric factorization failed");

  SolveOutcome out;
  out.kind = kind;
  out.energy_history.push_back(J);
  double alpha = 1.0, switch_tol = opt.newton_switch, g0 = -1.0;
  constexpr int memory = 8;
  std::vector<Eigen::VectorXd> mem_s, mem_y;
  Eigen::VectorXd x_prev, g_prev;
  bool have_prev = false;
  int it = 0;
  std::vector<double> gnorms;
  auto finish = [&](const Eigen::VectorXd& y) {
    Field f(prob.grid(), y);
    out.field = nodal ? align_axis(f) : align_axis(Field(prob.grid(), y.cwiseAbs()));
    out.energy = prob.energy(out.field);
    out.residual_norm = prob.residual_norm(out.field);
    const auto [dp, dm] = prob.nodal_defects(out.field.values());
    out.nehari_defect_plus = dp;
    out.nehari_defect_minus = nodal ? dm : 0.0;
    out.iterations = it;
    out.converged = out.residual_norm <= opt.tol;
    return out;
  };

  for (; it < opt.max_iter; ++it) {
    const Eigen::VectorXd ge = prob.euclidean_gradient(x);
    const double gn = std::sqrt((ge.array().square() / prob.volume().array()).sum());
    gnorms.push_back(gn);
    if (g0 < 0) g0 = gn;
    if (gn <= opt.tol) return finish(x);
    if (gn <= switch_tol * g0) {
      int steps = 0;
      auto polished = detail::newton_polish(prob, x, opt, steps);
      out.newton_steps += steps;
      it += steps;
      if (polished) {
        Eigen::VectorXd y = *polished;
        bool same_branch;
        if (nodal) {
          Field fy(prob.grid(), y);
          same_branch = count_nodal_regions(fy) == 2;
        } else {
          same_branch = y.minCoeff() >= -1e-8 * y.cwiseAbs().maxCoeff();
        }
        const double Jy = energy(y);
        if (same_branch && Jy <= J + 1e-6 * std::abs(J)) {
          out.energy_history.push_back(Jy);
          return finish(y);
        }
      }
      switch_tol *= 0.1;
    }
    if (have_prev) {
      Eigen::VectorXd sk = x - x_prev, yk = ge - g_prev;
      const double sy = sk.dot(yk);
      if (sy > 1e-12 * sk.norm() * yk.norm()) {
        mem_s.push_back(std::move(sk));
        mem_y.push_back(std::move(yk));
        if (static_cast<int>(mem_s.size()) > memory) {
          mem_s.erase(mem_s.begin());
          mem_y.erase(mem_y.begin());
        }
      }
    }
    // Two-loop recursion with the Sobolev metric as initial inverse Hessian.
    Eigen::VectorXd q = ge;
    const int mk = static_cast<int>(mem_s.size());
    std::vector<double> a(mk), rho(mk);
    for (int k = mk - 1; k >= 0; --k) {
      rho[k] = 1.0 / mem_s[k].dot(mem_y[k]);
      a[k] = rho[k] * mem_s[k].dot(q);
      q -= a[k] * mem_y[k];
    }
    Eigen::VectorXd dir = op.scatter(metric.solve(op.gather(q)));
    if (mk > 0) {
      const Eigen::VectorXd My = op.scatter(metric.solve(op.gather(mem_y.back())));
      dir *= mem_s.back().dot(mem_y.back()) / mem_y.back().dot(My);
    }
    for (int k = 0; k < mk; ++k) {
      const double b = rho[k] * mem_y[k].dot(dir);
      dir += (a[k] - b) * mem_s[k];
    }
    double slope = ge.dot(dir);
    if (!(slope > 0.0)) {
      mem_s.clear();
      mem_y.clear();
      dir = op.scatter(metric.solve(op.gather(ge)));
      slope = ge.dot(dir);
    }
    alpha = 1.0;
    x_prev = x;
    g_prev = ge;
    have_prev = true;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      Eigen::VectorXd y;
      try {
        y = project(x - alpha * dir);
      } catch (const DegenerateError&) {
        alpha *= 0.5;
        continue;
      }
      const double Jy = energy(y);
      if (Jy <= J - opt.armijo * alpha * slope) {
        x = std::move(y);
        J = Jy;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // Line search stalled at rounding level: let Newton try from here.
      switch_tol = std::numeric_limits<double>::infinity();
      mem_s.clear();
      mem_y.clear();
      have_prev = false;
      continue;
    }
    out.energy_history.push_back(J);
    if (nodal) {
      const double np = x.cwiseMax(0.0).norm(), nm = x.cwiseMin(0.0).norm();
      if (np < 1e-12 * nm || nm < 1e-12 * np)
        throw DegenerateError("nodal descent: a sign part collapsed");
    }
  }
  throw ConvergenceError(std::string(to_string(kind)) + " solve did not converge within max_iter",
                         std::vector<double>(x.data(), x.data() + x.size()), gnorms);
}

inline SolveOutcome solve_positive(const ReducedProblem& prob, const std::optional<Field>& init = std::nullopt,
                                   const SolverOptions& opt = {}) {
  return solve_on_nehari(prob, SolutionKind::positive, init, opt);
}

inline SolveOutcome solve_nodal(const ReducedProblem& prob, const std::optional<Field>& init = std::nullopt,
                                const SolverOptions& opt = {}) {
  return solve_on_nehari(prob, SolutionKind::nodal, init, opt);
}

}  // namespace annred
