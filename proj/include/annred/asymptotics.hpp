#pragma once

#include <boost/math/special_functions/bessel.hpp>
#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "annred/errors.hpp"
#include "annred/grid.hpp"
#include "annred/nehari.hpp"
#include "annred/params.hpp"
#include "annred/spectral.hpp"

namespace annred {

// ---------------------------------------------------------------------------
// Radial ground state of -Delta w + alpha w - beta w^p = 0 in R^N.

struct ShootOptions {
  double rel_tol = 1e-12;
  double abs_tol = 1e-14;
  /// Spacing of the stored profile.
  double ds = 1e-3;
  /// Profile is stored up to where w <= decay (relative to nothing, absolute), capped at s_cap.
  double decay = 1e-8;
  double s_cap = 50.0;
  /// Below match * w(0) the shot trajectory is replaced by the decaying linear solution.
  double match = 1e-5;
  int max_bisect = 200;
};

struct GroundState {
  int N = 1;
  double p = 3.0;
  double alpha = 1.0;
  double beta = 1.0;
  double z0 = 0.0;
  /// Profile samples on [0, s_max]: s, z(s), z'(s).
  std::vector<double> s;
  std::vector<double> z;
  std::vector<double> dz;
  /// Energy over R^N, |S^{N-1}| included.
  double I = 0.0;
  double s_match = 0.0;
  double s_max = 0.0;
  int bisections = 0;

  /// Cubic Hermite interpolation of the stored profile; 0 beyond s_max.
  double value(double r) const {
    if (r < 0.0) r = -r;
    if (s.empty()) throw DegenerateError("GroundState: empty profile");
    if (r >= s.back()) return r == s.back() ? z.back() : 0.0;
    const double h = s[1] - s[0];
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(r / h), s.size() - 2);
    const double t = (r - s[k]) / h, t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * z[k] + (t3 - 2 * t2 + t) * h * dz[k] + (-2 * t3 + 3 * t2) * z[k + 1] +
           (t3 - t2) * h * dz[k + 1];
  }
};

namespace detail {

using ShootState = std::array<double, 3>;

struct RadialRhs {
  int N;
  double p, alpha, beta;
  void operator()(const ShootState& x, ShootState& dx, double s) const {
    const double z = x[0], dz = x[1];
    const double zp = std::pow(std::abs(z), p - 1.0) * z;
    dx[0] = dz;
    dx[1] = alpha * z - beta * zp - (N - 1) * dz / s;
    dx[2] = std::pow(s, N - 1) *
            (0.5 * dz * dz + 0.5 * alpha * z * z - beta * std::pow(std::abs(z), p + 1.0) / (p + 1.0));
  }
};

enum class ShotFate { overshoot, undershoot, undecided };

/// Series start z0 + c s^2 near the origin.
inline std::pair<double, ShootState> shoot_start(const RadialRhs& f, double z0) {
  const double s0 = 1e-4;
  const double c = (f.alpha * z0 - f.beta * std::pow(z0, f.p)) / (2.0 * f.N);
  const double E0 = std::pow(s0, f.N) / f.N *
                    (0.5 * f.alpha * z0 * z0 - f.beta * std::pow(z0, f.p + 1.0) / (f.p + 1.0));
  return {s0, ShootState{z0 + c * s0 * s0, 2.0 * c * s0, E0}};
}

/// Integrates until the trajectory crosses zero, turns upward, or falls below
/// `stop_below` (returned as undecided together with the state there).
template <class Observer>
ShotFate shoot_once(const RadialRhs& f, double z0, const ShootOptions& opt, double stop_below, Observer&& obs) {
  namespace ode = boost::numeric::odeint;
  auto stepper = ode::make_dense_output(opt.abs_tol, opt.rel_tol, ode::runge_kutta_dopri5<ShootState>());
  auto [s0, x0] = shoot_start(f, z0);
  stepper.initialize(x0, s0, 1e-3);
  obs(s0, x0, false);
  while (stepper.current_time() < opt.s_cap) {
    stepper.do_step(f);
    const double t = stepper.current_time();
    const auto& x = stepper.current_state();
    if (!std::isfinite(x[0])) return ShotFate::overshoot;
    if (x[0] <= 0.0) return ShotFate::overshoot;
    if (x[1] >= 0.0) return ShotFate::undershoot;
    if (x[0] <= stop_below) {
      // Locate the crossing inside the last step.
      double lo = stepper.previous_time(), hi = t;
      ShootState y;
      for (int it = 0; it < 100 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        stepper.calc_state(mid, y);
        (y[0] > stop_below ? lo : hi) = mid;
      }
      stepper.calc_state(hi, y);
      obs(hi, y, true);
      return ShotFate::undecided;
    }
    if (!obs(t, x, false)) return ShotFate::undecided;
  }
  return ShotFate::undecided;
}

}  // namespace detail

/// Positive radial solution of w'' + (N-1)/s w' - alpha w + beta w^p = 0,
/// w'(0) = 0, w -> 0, by bisection on w(0) between undershooting (w' turns
/// positive) and overshooting (w crosses zero). The far tail is the decaying
/// solution s^{1-N/2} K_{N/2-1}(sqrt(alpha) s) of the linearized equation.
inline GroundState ground_state_shoot(int N, double p, double alpha = 1.0, double beta = 1.0,
                                      const ShootOptions& opt = {}) {
  if (N < 1) throw ParameterError("ground_state_shoot: N must be >= 1");
  if (!(p > 1.0) || !std::isfinite(p)) throw ParameterError("ground_state_shoot: p must exceed 1");
  if (N >= 3 && !(p < (N + 2.0) / (N - 2.0)))
    throw ParameterError("ground_state_shoot: p must be subcritical, p < (N+2)/(N-2)");
  if (!(alpha > 0.0) || !(beta > 0.0)) throw ParameterError("ground_state_shoot: alpha, beta must be positive");
  if (!(opt.rel_tol > 0.0) || !(opt.abs_tol > 0.0) || !(opt.ds > 0.0))
    throw ParameterError("ground_state_shoot: tolerances must be positive");

  const detail::RadialRhs f{N, p, alpha, beta};
  const double floor = std::pow(alpha / beta, 1.0 / (p - 1.0));
  auto fate = [&](double z0) {
    return detail::shoot_once(f, z0, opt, 0.0, [](double, const detail::ShootState&, bool) { return true; });
  };

  double lo = floor * (1.0 + 1e-9), hi = 2.0 * floor;
  if (fate(lo) != detail::ShotFate::undershoot)
    throw ParameterError("ground_state_shoot: no undershoot near the constant solution");
  int grow = 0;
  while (fate(hi) != detail::ShotFate::overshoot) {
    lo = hi;
    hi *= 2.0;
    if (++grow > 60) throw ParameterError("ground_state_shoot: could not bracket w(0) (supercritical p?)");
  }
  GroundState gs;
  gs.N = N;
  gs.p = p;
  gs.alpha = alpha;
  gs.beta = beta;
  for (int it = 0; it < opt.max_bisect; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (fate(mid) == detail::ShotFate::overshoot ? hi : lo) = mid;
    gs.bisections = it + 1;
  }
  gs.z0 = lo;

  // Final trajectory on the undershoot side, up to the matching level.
  std::vector<std::pair<double, detail::ShootState>> traj;
  std::optional<std::pair<double, detail::ShootState>> at_match;
  const auto last = detail::shoot_once(f, gs.z0, opt, opt.match * gs.z0,
                                       [&](double t, const detail::ShootState& x, bool matched) {
                                         if (matched) at_match = {t, x};
                                         else traj.emplace_back(t, x);
                                         return true;
                                       });
  if (last != detail::ShotFate::undecided || !at_match)
    throw ConvergenceError("ground_state_shoot: final trajectory left the profile before decaying");
  const double sm = at_match->first;
  const double zm = at_match->second[0], dzm = at_match->second[1];
  gs.s_match = sm;

  const double k = std::sqrt(alpha), nu = 0.5 * N - 1.0;
  auto kfun = [&](double s) { return std::pow(s, -nu) * boost::math::cyl_bessel_k(std::abs(nu), k * s); };
  auto kder = [&](double s) { return -k * std::pow(s, -nu) * boost::math::cyl_bessel_k(std::abs(nu + 1.0), k * s); };
  const double fm = kfun(sm);
  const double slope_m = zm * kder(sm) / fm;
  // Tail energy of the linear solution: integrating by parts, int (z'^2 + alpha z^2) s^{N-1} = -s^{N-1} z z'.
  const double tail = -0.5 * std::pow(sm, N - 1) * zm * slope_m;
  gs.I = sphere_area(N - 1) * (at_match->second[2] + tail);
  (void)dzm;

  // Stored profile on a uniform grid in s.
  namespace ode = boost::numeric::odeint;
  auto stepper = ode::make_dense_output(opt.abs_tol, opt.rel_tol, ode::runge_kutta_dopri5<detail::ShootState>());
  auto [s0, x0] = detail::shoot_start(f, gs.z0);
  stepper.initialize(x0, s0, 1e-3);
  const double c2 = (alpha * gs.z0 - beta * std::pow(gs.z0, p)) / (2.0 * N);
  for (int i = 0;; ++i) {
    const double s = i * opt.ds;
    double zv, dv;
    if (s < s0) {
      zv = gs.z0 + c2 * s * s;
      dv = 2.0 * c2 * s;
    } else if (s < sm) {
      while (stepper.current_time() < s) stepper.do_step(f);
      detail::ShootState y;
      stepper.calc_state(s, y);
      zv = y[0];
      dv = y[1];
    } else {
      zv = zm * kfun(s) / fm;
      dv = zm * kder(s) / fm;
    }
    gs.s.push_back(s);
    gs.z.push_back(zv);
    gs.dz.push_back(dv);
    if ((s >= sm && zv <= opt.decay) || s + opt.ds > opt.s_cap) break;
  }
  gs.s_max = gs.s.back();
  return gs;
}

/// Energy of the limit profile w_d(x) = z(x / sqrt(2d)) of
/// -Delta w + (w - w^p)/(2d) = 0 in R^N: (2d)^{(N-2)/2} I(z), which is
/// sqrt(2d) I(z) in the reduced dimension N = 3.
inline double limit_energy(double d, const GroundState& gs) {
  if (!(d > 0.0) || !std::isfinite(d)) throw DomainError("limit_energy: d must be positive");
  if (gs.alpha != 1.0 || gs.beta != 1.0) throw ContractError("limit_energy: expects the unit ground state");
  return std::pow(2.0 * d, 0.5 * (gs.N - 2)) * gs.I;
}

/// Leading-order J_lambda of a spike at distance ~0 from |z| = d:
/// lambda^{(p+1)/(p-1) - N/2} (2d)^{(N-2)/2} I(z).
inline double energy_scale(const ProblemParams& params, double d, const GroundState& gs) {
  const double N = params.reduced_dimension();
  return std::pow(params.lambda, (params.p + 1.0) / (params.p - 1.0) - 0.5 * N) * limit_energy(d, gs);
}

// ---------------------------------------------------------------------------
// Peaks.

struct PeakDiagnostics {
  int peak_i = -1;
  int peak_j = -1;
  /// Parabolically refined location.
  double peak_rho = 0.0;
  double peak_phi = 0.0;
  double peak_value = 0.0;
  /// |P| - R1.
  double inner_excess = 0.0;
  double boundary_distance = 0.0;
  double scaled_distance = 0.0;
  bool on_axis = false;
};

struct NodalPeaks {
  PeakDiagnostics plus;
  PeakDiagnostics minus;
  /// |P+ - P-| in D.
  double separation = 0.0;
  /// Distance between the lifted points in R^{2m}, measured in the (|y1|, |y2|) quarter plane.
  double lifted_separation = 0.0;
};

namespace detail {

/// Vertex offset of the parabola through (-1, a), (0, b), (1, c).
inline double parabola_offset(double a, double b, double c) {
  const double den = a - 2.0 * b + c;
  if (!(den < 0.0)) return 0.0;
  return std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
}

inline PeakDiagnostics peak_at(const Field& v, int i, int j, double sign, const ProblemParams& params) {
  const Grid& g = v.grid();
  const int nr = g.n_radial(), na = g.n_angular();
  auto f = [&](int a, int b) { return sign * v(a, b); };
  PeakDiagnostics out;
  out.peak_i = i;
  out.peak_j = j;
  out.peak_value = v(i, j);
  out.peak_rho = g.radial(i);
  out.peak_phi = g.angular(j);
  if (i > 0 && i + 1 < nr)
    out.peak_rho += parabola_offset(f(i - 1, j), f(i, j), f(i + 1, j)) * 0.5 * (g.radial(i + 1) - g.radial(i - 1));
  if (j > 0 && j + 1 < na)
    out.peak_phi +=
        parabola_offset(f(i, j - 1), f(i, j), f(i, j + 1)) * 0.5 * (g.angular(j + 1) - g.angular(j - 1));
  const auto dom = ReducedDomain::from(params);
  out.inner_excess = out.peak_rho - dom.R1;
  out.boundary_distance = std::max(0.0, std::min(out.peak_rho - dom.R1, dom.R2 - out.peak_rho));
  out.scaled_distance = std::sqrt(params.lambda) * out.boundary_distance;
  out.on_axis = (j == 0 || j == na - 1);
  return out;
}

inline std::pair<int, int> argmax(const Field& v, double sign) {
  const Grid& g = v.grid();
  int bi = -1, bj = -1;
  double best = 0.0;
  for (int i = 0; i < g.n_radial(); ++i)
    for (int j = 0; j < g.n_angular(); ++j)
      if (sign * v(i, j) > best) {
        best = sign * v(i, j);
        bi = i;
        bj = j;
      }
  return {bi, bj};
}

inline void require_peakable(const Field& v) {
  if (v.empty() || v.grid().kind() != GridKind::reduced) throw ShapeError("peak_diagnostics: reduced field expected");
  if (!v.all_finite()) throw DegenerateError("peak_diagnostics: non-finite field");
  if (v.values().cwiseAbs().maxCoeff() == 0.0) throw DegenerateError("peak_diagnostics: flat field");
}

}  // namespace detail

/// Global maximum of |v|.
inline PeakDiagnostics peak_diagnostics(const Field& v, const ProblemParams& params) {
  detail::require_peakable(v);
  const Eigen::Index k = [&] {
    Eigen::Index idx;
    v.values().cwiseAbs().maxCoeff(&idx);
    return idx;
  }();
  const int na = v.grid().n_angular();
  const int i = static_cast<int>(k) / na, j = static_cast<int>(k) % na;
  return detail::peak_at(v, i, j, v(i, j) < 0.0 ? -1.0 : 1.0, params);
}

/// Maxima of v+ and v- for a sign-changing field.
inline NodalPeaks nodal_peak_diagnostics(const Field& v, const ProblemParams& params) {
  detail::require_peakable(v);
  const auto [ip, jp] = detail::argmax(v, 1.0);
  const auto [im, jm] = detail::argmax(v, -1.0);
  if (ip < 0 || im < 0) throw DegenerateError("nodal_peak_diagnostics: field does not change sign");
  NodalPeaks out;
  out.plus = detail::peak_at(v, ip, jp, 1.0, params);
  out.minus = detail::peak_at(v, im, jm, -1.0, params);
  auto cart = [](const PeakDiagnostics& d) {
    return std::pair{d.peak_rho * std::sin(d.peak_phi), d.peak_rho * std::cos(d.peak_phi)};
  };
  const auto [xp, yp] = cart(out.plus);
  const auto [xm, ym] = cart(out.minus);
  out.separation = std::hypot(xp - xm, yp - ym);
  auto quarter = [](const PeakDiagnostics& d) {
    const double r = std::sqrt(2.0 * d.peak_rho), t = 0.5 * d.peak_phi;
    return std::pair{r * std::cos(t), r * std::sin(t)};
  };
  const auto [ap, bp] = quarter(out.plus);
  const auto [am, bm] = quarter(out.minus);
  out.lifted_separation = std::hypot(ap - am, bp - bm);
  return out;
}

/// max |v| over nodes farther than `radius` (Euclidean, in D) from the point
/// at (center_rho, center_phi).
inline double sup_outside_ball(const Field& v, double center_rho, double center_phi, double radius) {
  const Grid& g = v.grid();
  double out = 0.0;
  for (int i = 0; i < g.n_radial(); ++i)
    for (int j = 0; j < g.n_angular(); ++j) {
      const double rho = g.radial(i), phi = g.angular(j);
      const double d2 = rho * rho + center_rho * center_rho - 2.0 * rho * center_rho * std::cos(phi - center_phi);
      if (d2 > radius * radius) out = std::max(out, std::abs(v(i, j)));
    }
  return out;
}

/// Slope of log z against s over [s_lo, s_hi] (least squares); the ground
/// state decays like e^{-sqrt(alpha) s} up to a power of s.
inline double log_decay_rate(const GroundState& gs, double s_lo, double s_hi) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < gs.s.size(); ++k) {
    if (gs.s[k] < s_lo || gs.s[k] > s_hi || !(gs.z[k] > 0.0)) continue;
    const double x = gs.s[k], y = std::log(gs.z[k]);
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  if (n < 2) throw DegenerateError("log_decay_rate: not enough samples in range");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------
// Sweep rows and trends.

/// Scalar diagnostics for one lambda.
struct SweepRow {
  double lambda = 0.0;
  bool ok = false;
  std::string error;
  double energy = 0.0;
  double residual = 0.0;
  int iterations = 0;
  /// J / energy_scale(R1).
  double energy_ratio = 0.0;
  double peak_rho = 0.0;
  double peak_phi = 0.0;
  double inner_excess = 0.0;
  double boundary_distance = 0.0;
  double scaled_distance = 0.0;
  bool on_axis = false;
  double sup_outside = 0.0;
  int morse_index = -1;
  double mu1 = 0.0;
  double mu1_bound = 0.0;
  int phi_negative = -1;
  /// Q(Phi^k) for k = 1..k_max.
  std::vector<double> phi_q;
  double nodal_energy = 0.0;
  int nodal_regions = -1;
  int nodal_morse = -1;
  double nodal_separation = 0.0;
  double nodal_lifted_separation = 0.0;
};

enum class Trend { pass, fail, not_applicable };

inline const char* to_string(Trend t) {
  switch (t) {
    case Trend::pass: return "pass";
    case Trend::fail: return "fail";
    default: return "not_applicable";
  }
}

struct TrendFlag {
  std::string name;
  Trend status = Trend::not_applicable;
  std::string detail;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<TrendFlag> flags;

  bool all_pass() const {
    return std::all_of(flags.begin(), flags.end(), [](const TrendFlag& f) { return f.status != Trend::fail; });
  }
  const TrendFlag* flag(const std::string& name) const {
    for (const auto& f : flags)
      if (f.name == name) return &f;
    return nullptr;
  }
};

/// Radius of the ball around the limit peak excluded from the decay check.
inline double decay_ball_radius(const ProblemParams& params) {
  const auto dom = ReducedDomain::from(params);
  return 0.2 * (dom.R2 - dom.R1);
}

inline SweepRow make_sweep_row(const ProblemParams& params, const SolveOutcome& sol, const PeakDiagnostics& peak,
                               double mu1, const std::vector<PhiKReport>& phi, const GroundState& gs) {
  const auto dom = ReducedDomain::from(params);
  SweepRow row;
  row.lambda = params.lambda;
  row.ok = sol.converged;
  row.energy = sol.energy.total;
  row.residual = sol.residual_norm;
  row.iterations = sol.iterations;
  row.energy_ratio = sol.energy.total / energy_scale(params, dom.R1, gs);
  row.peak_rho = peak.peak_rho;
  row.peak_phi = peak.peak_phi;
  row.inner_excess = peak.inner_excess;
  row.boundary_distance = peak.boundary_distance;
  row.scaled_distance = peak.scaled_distance;
  row.on_axis = peak.on_axis;
  row.sup_outside = sup_outside_ball(sol.field, dom.R1, 0.0, decay_ball_radius(params));
  row.mu1 = mu1;
  row.mu1_bound = (1.0 - params.p) * params.lambda;
  row.phi_negative = morse_lower_bound_upstairs(phi);
  for (const auto& r : phi) row.phi_q.push_back(r.Q_value);
  return row;
}

/// Trend flags over rows sorted by strictly increasing lambda. Failed rows
/// are kept in the table and excluded from the trends.
inline SweepReport concentration_report(std::vector<SweepRow> rows, double energy_tolerance = 0.15) {
  for (std::size_t k = 1; k < rows.size(); ++k)
    if (!(rows[k].lambda > rows[k - 1].lambda))
      throw ContractError("concentration_report: lambda values must be strictly increasing");
  SweepReport rep;
  rep.rows = std::move(rows);
  std::vector<const SweepRow*> ok;
  for (const auto& r : rep.rows)
    if (r.ok) ok.push_back(&r);
  const bool trends = rep.rows.size() >= 3;
  const bool all_ok = ok.size() == rep.rows.size();

  auto add = [&](std::string name, bool applicable, bool pass, std::string detail = {}) {
    rep.flags.push_back({std::move(name), !applicable ? Trend::not_applicable : (pass ? Trend::pass : Trend::fail),
                         std::move(detail)});
  };
  auto monotone = [&](auto key, bool strict, std::size_t from) {
    for (std::size_t k = std::max<std::size_t>(from, 1); k < ok.size(); ++k) {
      const double a = key(*ok[k - 1]), b = key(*ok[k]);
      if (strict ? !(b < a) : !(b <= a)) return false;
    }
    return true;
  };

  add("all_rows_converged", !rep.rows.empty(), all_ok);
  add("peak_approaches_inner_sphere", trends, all_ok && monotone([](const SweepRow& r) { return r.inner_excess; }, true, 0));
  const std::size_t tail = ok.size() >= 3 ? ok.size() - 3 : 0;
  add("scaled_distance_grows_on_tail", trends,
      all_ok && monotone([](const SweepRow& r) { return -r.scaled_distance; }, false, tail + 1));
  add("decay_away_from_peak", trends, all_ok && monotone([](const SweepRow& r) { return r.sup_outside; }, true, 0));
  add("energy_ratio_monotone", trends,
      all_ok && monotone([](const SweepRow& r) { return std::abs(r.energy_ratio - 1.0); }, false, 0));
  if (!ok.empty()) {
    const double dev = std::abs(ok.back()->energy_ratio - 1.0);
    add("energy_ratio_final", trends, dev <= energy_tolerance, "|ratio - 1| = " + std::to_string(dev));
  } else {
    add("energy_ratio_final", false, false);
  }
  add("mu1_below_bound", !ok.empty(),
      std::all_of(ok.begin(), ok.end(), [](const SweepRow* r) { return r->mu1 <= r->mu1_bound; }));
  add("mu1_decreasing", trends, all_ok && monotone([](const SweepRow& r) { return r.mu1; }, true, 0));
  add("phi_count_nondecreasing", trends,
      all_ok && monotone([](const SweepRow& r) { return -static_cast<double>(r.phi_negative); }, false, 0));
  add("phi_count_grows", trends, !ok.empty() && ok.back()->phi_negative > ok.front()->phi_negative,
      ok.empty() ? std::string{}
                 : std::to_string(ok.front()->phi_negative) + " -> " + std::to_string(ok.back()->phi_negative));
  return rep;
}

}  // namespace annred
