#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "annred/asymptotics.hpp"
#include "annred/config.hpp"
#include "annred/coords.hpp"
#include "annred/disc.hpp"
#include "annred/io.hpp"
#include "annred/nehari.hpp"
#include "annred/spectral.hpp"

#ifndef ANNRED_VERSION
#define ANNRED_VERSION "0.1.0"
#endif
#ifndef ANNRED_COMMIT
#define ANNRED_COMMIT "unknown"
#endif

namespace annred {

inline std::string version_tag() { return std::string(ANNRED_VERSION) + "+" + ANNRED_COMMIT; }

// ---------------------------------------------------------------------------
// Reduction identity suite.

struct VerifyCheck {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  bool all_pass() const {
    return !checks.empty() &&
           std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.pass; });
  }
};

struct ManufacturedField {
  std::string name;
  UpstairsExpr u;
};

/// Smooth O(m) x O(m)-invariant fields on the annulus, written in (r, theta).
inline std::vector<ManufacturedField> manufactured_fields() {
  return {
      {"sin_r_cos2t", [](double r, double t) { return std::sin(r) * std::cos(2 * t); }},
      {"gauss_sq", [](double r, double t) {
         const double q = 1 + 0.5 * std::cos(2 * t);
         return std::exp(-r * r) * q * q;
       }},
      {"quartic", [](double r, double t) {
         const double c = std::cos(2 * t);
         return r * r * r * r * c * c - r * r;
       }},
      {"log_cos4t", [](double r, double t) { return std::log(r) * std::cos(4 * t); }},
      {"rational_cubic", [](double r, double t) {
         const double c = std::cos(2 * t);
         return 1 / (1 + r * r) + r * c * c * c;
       }},
  };
}

/// max over a node subsample of |v| and the pure fourth derivatives of
/// v(rho, phi) (central differences of the closed form).
inline double c4_scale(const std::function<double(double, double)>& v, const Grid& g) {
  const double e = 2e-2;
  auto d4 = [e](const std::function<double(double)>& f, double x) {
    return (f(x - 2 * e) - 4 * f(x - e) + 6 * f(x) - 4 * f(x + e) + f(x + 2 * e)) / (e * e * e * e);
  };
  double s = 0.0;
  for (int i = 0; i < g.n_radial(); i += 4)
    for (int j = 0; j < g.n_angular(); j += 4) {
      const double rho = g.radial(i), phi = g.angular(j);
      s = std::max({s, std::abs(v(rho, phi)), std::abs(d4([&](double x) { return v(x, phi); }, rho)),
                    std::abs(d4([&](double y) { return v(rho, y); }, phi))});
    }
  return s;
}

/// Discrete identity checks: polynomial exactness, second-order agreement on
/// manufactured fields, and transform round trips. `lift` replaces the exact
/// map for negative controls.
inline VerifyReport verify_reduction_suite(
    const ProblemParams& params, const LiftMap& lift = [](const PolarPointD& pt) { return lift_point(pt); }) {
  params.validate();
  const int m = params.m;
  VerifyReport rep;
  auto add = [&](std::string name, double value, double limit, bool pass) {
    rep.checks.push_back({std::move(name), value, limit, pass && std::isfinite(value)});
  };

  const std::vector<std::pair<int, int>> poly_grids = {{64, 33}, {128, 65}};
  const std::vector<ManufacturedField> polys = {
      {"r^2", [](double r, double) { return r * r; }},
      {"r^2 cos(2 theta)", [](double r, double t) { return r * r * std::cos(2 * t); }}};
  for (const auto& f : polys)
    for (const auto& [nr, na] : poly_grids) {
      const auto g = Grid::reduced(params, nr, na);
      const auto c = verify_laplacian_identity(f.u, g, m, lift);
      add("exact " + f.name + " @" + std::to_string(nr) + "x" + std::to_string(na), c.max_discrepancy, 1e-10,
          c.max_discrepancy <= 1e-10);
    }

  const std::pair<int, int> coarse{128, 65}, fine{256, 129};
  for (const auto& f : manufactured_fields()) {
    double prev = 0.0;
    for (const auto& [nr, na] : {coarse, fine}) {
      const auto g = Grid::reduced(params, nr, na);
      const auto c = verify_laplacian_identity(f.u, g, m, lift);
      const double h = std::max(g->radial_spacing(), g->angular_spacing());
      const double scale = c4_scale(
          [&](double rho, double phi) { return f.u(std::sqrt(2.0 * rho), 0.5 * phi); },
          *g);
      const double limit = 10.0 * h * h * scale;
      add("defect " + f.name + " @" + std::to_string(nr) + "x" + std::to_string(na), c.max_discrepancy, limit,
          c.max_discrepancy <= limit);
      if (prev > 0.0) {
        const double order = std::log2(prev / c.max_discrepancy);
        add("order " + f.name, order, 1.9, order >= 1.9);
      }
      prev = c.max_discrepancy;
    }
  }

  // Round trips.
  const auto g = Grid::reduced(params, 64, 33);
  const Field v = Field::sample(g, [](double rho, double phi) { return std::sin(3 * rho) * std::cos(phi) + rho; });
  const Field back = reduce_field(lift_field(v));
  const bool same = back.grid().same_as(*g) &&
                    std::memcmp(back.values().data(), v.values().data(), sizeof(double) * v.values().size()) == 0;
  add("field round trip (bitwise)", same ? 0.0 : 1.0, 0.0, same);
  double worst = 0.0;
  bool in_range = true;
  for (int i = 0; i < g->n_radial(); ++i)
    for (int j = 0; j < g->n_angular(); ++j) {
      try {
        const auto q = reduce_point(lift({g->radial(i), g->angular(j)}), params);
        worst = std::max({worst, std::abs(q.rho - g->radial(i)) / g->radial(i), std::abs(q.phi - g->angular(j))});
      } catch (const DomainError&) {
        in_range = false;
      }
    }
  add("point round trip", in_range ? worst : 1.0, 1e-14, in_range && worst <= 1e-14);
  return rep;
}

// ---------------------------------------------------------------------------
// Single solves.

/// Pointwise residuals of the strong equations at non-Dirichlet nodes:
/// downstairs -Delta v + (lambda v - |v|^(p-1) v)/(2 rho), upstairs
/// -Delta u + lambda u - |u|^(p-1) u for the lifted u.
struct LiftedResidual {
  double downstairs = 0.0;
  double upstairs = 0.0;
  double ratio = 0.0;
};

inline LiftedResidual lifted_residual(const ProblemParams& params, const Field& v) {
  const Grid& g = v.grid();
  const Field u = lift_field(v);
  const Field ld = strong_laplacian(v), lu = strong_laplacian(u);
  const double lam = params.lambda, p = params.p;
  LiftedResidual out;
  for (int i = 1; i + 1 < g.n_radial(); ++i)
    for (int j = 0; j < g.n_angular(); ++j) {
      const double x = v(i, j), nl = lam * x - std::pow(std::abs(x), p - 1.0) * x;
      out.downstairs = std::max(out.downstairs, std::abs(-ld(i, j) + nl / (2.0 * g.radial(i))));
      out.upstairs = std::max(out.upstairs, std::abs(-lu(i, j) + nl));
    }
  out.ratio = out.downstairs > 0.0 ? out.upstairs / out.downstairs : 0.0;
  return out;
}

inline SolverOptions solver_options(const RunConfig& cfg) {
  SolverOptions o;
  o.tol = cfg.tol;
  o.max_iter = cfg.max_iter;
  o.newton_max = cfg.newton_max;
  return o;
}

inline EigOptions eig_options(const RunConfig& cfg) {
  EigOptions o;
  o.tol = cfg.eig_tol;
  o.seed = cfg.seed;
  return o;
}

struct SolveArtifacts {
  ProblemParams params;
  SolveOutcome sol;
  MorseResult morse;
  int nodal_regions = 0;
  double monotonicity = 0.0;
  std::optional<PeakDiagnostics> peak;
  std::optional<NodalPeaks> nodal_peaks;
  LiftedResidual lifted;
};

inline SolveArtifacts solve_and_diagnose(const RunConfig& cfg, const ProblemParams& params, SolutionKind kind) {
  const auto grid = Grid::reduced(params, cfg.n_rho, cfg.n_phi);
  const ReducedProblem prob(params, grid);
  SolveArtifacts a;
  a.params = params;
  a.sol = kind == SolutionKind::positive ? solve_positive(prob, std::nullopt, solver_options(cfg))
                                         : solve_nodal(prob, std::nullopt, solver_options(cfg));
  a.morse = morse_index(prob, a.sol.field, 1e-8, eig_options(cfg));
  a.nodal_regions = count_nodal_regions(a.sol.field);
  a.monotonicity = monotonicity_violation(a.sol.field);
  if (kind == SolutionKind::positive) a.peak = peak_diagnostics(a.sol.field, params);
  else a.nodal_peaks = nodal_peak_diagnostics(a.sol.field, params);
  a.lifted = lifted_residual(params, a.sol.field);
  return a;
}

inline json peak_json(const PeakDiagnostics& d) {
  return json{{"peak_i", d.peak_i},
              {"peak_j", d.peak_j},
              {"peak_rho", d.peak_rho},
              {"peak_phi", d.peak_phi},
              {"peak_value", d.peak_value},
              {"inner_excess", d.inner_excess},
              {"boundary_distance", d.boundary_distance},
              {"scaled_distance", d.scaled_distance},
              {"on_axis", d.on_axis}};
}

inline json solve_json(const SolveArtifacts& a) {
  json j{{"kind", to_string(a.sol.kind)},
         {"lambda", a.params.lambda},
         {"converged", a.sol.converged},
         {"energy", {{"total", a.sol.energy.total},
                     {"dirichlet", a.sol.energy.dirichlet},
                     {"mass", a.sol.energy.mass},
                     {"power", a.sol.energy.power}}},
         {"residual", a.sol.residual_norm},
         {"iterations", a.sol.iterations},
         {"newton_steps", a.sol.newton_steps},
         {"nehari_defect_plus", a.sol.nehari_defect_plus},
         {"nehari_defect_minus", a.sol.nehari_defect_minus},
         {"morse_index", a.morse.index},
         {"morse_indeterminate", a.morse.indeterminate},
         {"morse_inertia", a.morse.inertia},
         {"eigenvalues", a.morse.eigenvalues},
         {"nodal_regions", a.nodal_regions},
         {"monotonicity_violation", a.monotonicity},
         {"strong_residual_downstairs", a.lifted.downstairs},
         {"strong_residual_upstairs", a.lifted.upstairs},
         {"upstairs_to_downstairs", a.lifted.ratio}};
  if (a.peak) j["peak"] = peak_json(*a.peak);
  if (a.nodal_peaks) {
    j["peak_plus"] = peak_json(a.nodal_peaks->plus);
    j["peak_minus"] = peak_json(a.nodal_peaks->minus);
    j["separation"] = a.nodal_peaks->separation;
    j["lifted_separation"] = a.nodal_peaks->lifted_separation;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Sweeps.

inline std::vector<PhiKReport> phi_k_reports(const Field& g1, const Field& v, const ProblemParams& params, int k_min,
                                             int k_max) {
  std::vector<PhiKReport> out;
  for (int k = k_min; k <= k_max; ++k) out.push_back(quadratic_form_phi_k(g1, v, params, k));
  return out;
}

/// Everything for one lambda. Failures are caught and recorded in the row.
inline SweepRow sweep_point(const RunConfig& cfg, double lambda, const GroundState& gs, const fs::path& out_dir) {
  ProblemParams params = cfg.params;
  params.lambda = lambda;
  SweepRow row;
  row.lambda = lambda;
  try {
    const auto grid = Grid::reduced(params, cfg.n_rho, cfg.n_phi);
    const ReducedProblem prob(params, grid);
    const auto sol = solve_positive(prob, std::nullopt, solver_options(cfg));
    const auto peak = peak_diagnostics(sol.field, params);
    const auto eig = first_symmetric_eigenpair(prob, sol.field);
    const auto phi = phi_k_reports(eig.g1, sol.field, params, cfg.k_min, cfg.k_max);
    row = make_sweep_row(params, sol, peak, eig.mu1, phi, gs);
    row.morse_index = morse_index(prob, sol.field, 1e-8, eig_options(cfg)).index;
    dump_field(sol.field, out_dir / "fields" / ("positive_l" + lambda_tag(lambda)),
               json{{"lambda", lambda}, {"kind", "positive"}, {"energy", sol.energy.total}});
    if (cfg.nodal) {
      const auto nod = solve_nodal(prob, std::nullopt, solver_options(cfg));
      const auto np = nodal_peak_diagnostics(nod.field, params);
      row.nodal_energy = nod.energy.total;
      row.nodal_regions = count_nodal_regions(nod.field);
      row.nodal_morse = morse_index(prob, nod.field, 1e-8, eig_options(cfg)).index;
      row.nodal_separation = np.separation;
      row.nodal_lifted_separation = np.lifted_separation;
      row.ok = row.ok && nod.converged;
      dump_field(nod.field, out_dir / "fields" / ("nodal_l" + lambda_tag(lambda)),
                 json{{"lambda", lambda}, {"kind", "nodal"}, {"energy", nod.energy.total}});
    }
    if (!row.ok && row.error.empty()) row.error = "solver did not converge";
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

struct SweepControl {
  bool resume = false;
  /// Stop after this many freshly computed rows have been persisted (0 = never).
  int interrupt_after = 0;
};

class SweepInterrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepRun {
  SweepReport report;
  GroundState ground_state;
  int reused = 0;
  double seconds = 0.0;
  std::vector<double> row_seconds;
};

/// Hash of the settings a row depends on (not the lambda list, output or workers).
inline std::string row_config_hash(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.lambdas = {1.0};
  c.params.lambda = 1.0;
  c.out_dir.clear();
  c.workers = 1;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_snapshot_yaml(c))));
  return buf;
}

/// Runs the lambda list on a bounded worker pool, persisting each row as
/// rows/l<lambda>.json. Writes sweep.csv, summary.json and config.yaml.
inline SweepRun run_sweep(const RunConfig& cfg, const SweepControl& ctl = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out = cfg.out_dir;
  fs::create_directories(out / "rows");
  const std::string hash = row_config_hash(cfg);

  SweepRun run;
  run.ground_state = ground_state_shoot(cfg.params.reduced_dimension(), cfg.params.p);
  const std::size_t n = cfg.lambdas.size();
  std::vector<std::optional<SweepRow>> rows(n);
  run.row_seconds.assign(n, 0.0);
  auto row_path = [&](double lam) { return out / "rows" / ("l" + lambda_tag(lam) + ".json"); };
  if (ctl.resume) {
    for (std::size_t k = 0; k < n; ++k) {
      const auto path = row_path(cfg.lambdas[k]);
      if (!fs::exists(path)) continue;
      try {
        const json j = json::parse(read_file(path));
        if (j.at("config_hash").get<std::string>() != hash) continue;
        rows[k] = row_from_json(j.at("row"));
        run.row_seconds[k] = j.value("seconds", 0.0);
        ++run.reused;
      } catch (const std::exception&) {
        // Unreadable rows are recomputed.
      }
    }
  }

  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < n; ++k)
    if (!rows[k]) todo.push_back(k);
  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::atomic<bool> stop{false};
  std::mutex err_mu;
  std::string io_error;
  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t t = next.fetch_add(1);
      if (t >= todo.size()) return;
      const std::size_t k = todo[t];
      const auto s0 = std::chrono::steady_clock::now();
      SweepRow row = sweep_point(cfg, cfg.lambdas[k], run.ground_state, out);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count();
      try {
        write_atomic(row_path(cfg.lambdas[k]),
                     json{{"config_hash", hash}, {"row", row_to_json(row)}, {"seconds", secs}}.dump(2) + "\n");
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mu);
        io_error = e.what();
      }
      rows[k] = std::move(row);
      run.row_seconds[k] = secs;
      if (ctl.interrupt_after > 0 && done.fetch_add(1) + 1 >= ctl.interrupt_after) stop.store(true);
    }
  };
  const int nthreads = std::max(1, std::min<int>(cfg.workers, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < nthreads; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (!io_error.empty()) throw std::runtime_error("sweep: " + io_error);
  if (stop.load() && std::any_of(rows.begin(), rows.end(), [](const auto& r) { return !r.has_value(); }))
    throw SweepInterrupted("sweep interrupted after " + std::to_string(done.load()) + " rows");

  std::vector<SweepRow> flat;
  for (auto& r : rows) flat.push_back(std::move(*r));
  run.report = concentration_report(std::move(flat), cfg.energy_tolerance);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_atomic(out / "sweep.csv", sweep_csv(run.report.rows, cfg.k_min, cfg.k_max));
  write_atomic(out / "config.yaml", config_snapshot_yaml(cfg) + "\n");
  json timings = json::array();
  for (std::size_t k = 0; k < n; ++k) timings.push_back({{"lambda", cfg.lambdas[k]}, {"seconds", run.row_seconds[k]}});
  json summary{{"version", version_tag()},
               {"config", config_snapshot_yaml(cfg)},
               {"ground_state", {{"N", run.ground_state.N}, {"p", run.ground_state.p}, {"z0", run.ground_state.z0},
                                 {"I", run.ground_state.I}}},
               {"flags", report_flags_json(run.report)},
               {"all_pass", run.report.all_pass()},
               {"rows", run.report.rows.size()},
               {"rows_reused", run.reused},
               {"failed_rows", std::count_if(run.report.rows.begin(), run.report.rows.end(),
                                             [](const SweepRow& r) { return !r.ok; })},
               {"timings", {{"total_seconds", run.seconds}, {"per_lambda", timings}}}};
  write_atomic(out / "summary.json", summary.dump(2) + "\n");
  return run;
}

}  // namespace annred
