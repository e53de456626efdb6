#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "annred/annred.hpp"

using namespace annred;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kInterrupted = 3;

struct Common {
  std::string config;
  std::string out;
  long long seed = -1;
  int workers = 0;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) cfg = load_config(c.config);
  apply_env_overrides(cfg);
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  if (c.workers > 0) cfg.workers = c.workers;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "flat YAML config file");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "random seed")->check(CLI::NonNegativeNumber);
  app->add_option("--workers", c.workers, "worker threads for sweeps")->check(CLI::PositiveNumber);
}

int cmd_verify(const RunConfig& cfg, bool corrupt) {
  LiftMap lift = [](const PolarPointD& pt) { return lift_point(pt); };
  if (corrupt) lift = [](const PolarPointD& pt) { return PolarPoint2m{std::sqrt(2.0 * pt.rho) * 1.001, 0.5 * pt.phi}; };
  const auto rep = verify_reduction_suite(cfg.params, lift);
  json checks = json::array();
  for (const auto& c : rep.checks) {
    std::printf("%-4s %-40s %.3e (limit %.3e)\n", c.pass ? "ok" : "FAIL", c.name.c_str(), c.value, c.limit);
    checks.push_back({{"name", c.name}, {"value", c.value}, {"limit", c.limit}, {"pass", c.pass}});
  }
  write_atomic(fs::path(cfg.out_dir) / "verify.json",
               json{{"version", version_tag()}, {"all_pass", rep.all_pass()}, {"checks", checks}}.dump(2) + "\n");
  std::printf("%s\n", rep.all_pass() ? "all identity checks passed" : "identity checks FAILED");
  return rep.all_pass() ? kOk : kCheckFailed;
}

int cmd_solve(const RunConfig& cfg, const std::string& kind_name) {
  const SolutionKind kind = kind_name == "nodal" ? SolutionKind::nodal : SolutionKind::positive;
  SolveArtifacts a;
  try {
    a = solve_and_diagnose(cfg, cfg.params, kind);
  } catch (const ConvergenceError& e) {
    write_atomic(fs::path(cfg.out_dir) / ("solve_" + kind_name + ".json"),
                 json{{"kind", kind_name}, {"lambda", cfg.params.lambda}, {"converged", false}, {"error", e.what()}}
                         .dump(2) + "\n");
    std::fprintf(stderr, "solve did not converge: %s\n", e.what());
    return kCheckFailed;
  }
  const fs::path out = cfg.out_dir;
  json j = solve_json(a);
  j["version"] = version_tag();
  j["config"] = config_snapshot_yaml(cfg);
  j["field"] = "fields/" + kind_name + ".bin";
  j["lifted_field"] = "fields/" + kind_name + "_lifted.bin";
  dump_field(a.sol.field, out / "fields" / kind_name, json{{"lambda", cfg.params.lambda}, {"kind", kind_name}});
  dump_field(lift_field(a.sol.field), out / "fields" / (kind_name + "_lifted"),
             json{{"lambda", cfg.params.lambda}, {"kind", kind_name}, {"space", "annulus (r, theta)"}});
  write_atomic(out / ("solve_" + kind_name + ".json"), j.dump(2) + "\n");
  std::printf("%s solve at lambda=%g: J=%.10g residual=%.3e morse=%d regions=%d converged=%d\n", kind_name.c_str(),
              cfg.params.lambda, a.sol.energy.total, a.sol.residual_norm, a.morse.index, a.nodal_regions,
              a.sol.converged ? 1 : 0);
  std::printf("strong residuals: downstairs %.3e upstairs %.3e ratio %.3f\n", a.lifted.downstairs, a.lifted.upstairs,
              a.lifted.ratio);
  return a.sol.converged ? kOk : kCheckFailed;
}

int cmd_sweep(const RunConfig& cfg, const SweepControl& ctl) {
  SweepRun run;
  try {
    run = run_sweep(cfg, ctl);
  } catch (const SweepInterrupted& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kInterrupted;
  }
  for (const auto& r : run.report.rows)
    std::printf("lambda=%-8g ok=%d J=%.8g ratio=%.4f |P|-R1=%.4e sqrt(l)d=%.4f mu1=%.6g phi-=%d %s\n", r.lambda,
                r.ok ? 1 : 0, r.energy, r.energy_ratio, r.inner_excess, r.scaled_distance, r.mu1, r.phi_negative,
                r.error.c_str());
  for (const auto& f : run.report.flags)
    std::printf("%-32s %s %s\n", f.name.c_str(), to_string(f.status), f.detail.c_str());
  std::printf("rows reused: %d, wall time %.1f s\n", run.reused, run.seconds);
  return run.report.all_pass() ? kOk : kCheckFailed;
}

int cmd_ground_state(const RunConfig& cfg, int N, double p) {
  if (N <= 0) N = cfg.params.reduced_dimension();
  if (!(p > 0.0)) p = cfg.params.p;
  const auto gs = ground_state_shoot(N, p);
  std::string dat = "# s z dz\n";
  char buf[96];
  for (std::size_t k = 0; k < gs.s.size(); k += 10) {
    std::snprintf(buf, sizeof buf, "%.6f %.16e %.16e\n", gs.s[k], gs.z[k], gs.dz[k]);
    dat += buf;
  }
  const fs::path out = cfg.out_dir;
  write_atomic(out / "ground_state.dat", dat);
  write_atomic(out / "ground_state.json",
               json{{"N", gs.N}, {"p", gs.p}, {"z0", gs.z0}, {"I", gs.I}, {"s_max", gs.s_max}, {"s_match", gs.s_match},
                    {"version", version_tag()}}
                       .dump(2) + "\n");
  std::printf("ground state N=%d p=%g: z(0)=%.15g I=%.15g s_max=%.3f\n", gs.N, gs.p, gs.z0, gs.I, gs.s_max);
  return kOk;
}

int cmd_spectrum(const RunConfig& cfg) {
  const auto& params = cfg.params;
  const auto grid = Grid::reduced(params, cfg.n_rho, cfg.n_phi);
  const ReducedProblem prob(params, grid);
  const auto sol = solve_positive(prob, std::nullopt, solver_options(cfg));
  const auto mi = morse_index(prob, sol.field, 1e-8, eig_options(cfg));
  const auto eig = first_symmetric_eigenpair(prob, sol.field);
  const auto phi = phi_k_reports(eig.g1, sol.field, params, cfg.k_min, cfg.k_max);
  json mc = nullptr;
  if (cfg.mc_samples > 0) {
    const auto est = monte_carlo_phi_k(eig.g1, sol.field, params, cfg.k_min, cfg.mc_samples, cfg.seed);
    mc = {{"k", cfg.k_min}, {"value", est.value}, {"std_error", est.std_error}, {"samples", est.samples}};
  }
  std::string dat = "# k nu_k Q Q0 Q_ang Q_direct\n";
  char buf[160];
  json qs = json::array();
  for (const auto& r : phi) {
    std::snprintf(buf, sizeof buf, "%d %.1f %.12e %.12e %.12e %.12e\n", r.k, r.nu_k, r.Q_value, r.Q0, r.Q_ang,
                  r.Q_direct);
    dat += buf;
    qs.push_back({{"k", r.k}, {"nu_k", r.nu_k}, {"Q", r.Q_value}, {"Q0", r.Q0}, {"Q_ang", r.Q_ang},
                  {"Q_direct", r.Q_direct}});
  }
  const fs::path out = cfg.out_dir;
  write_atomic(out / "phi_k.dat", dat);
  write_atomic(out / "spectrum.json",
               json{{"lambda", params.lambda},
                    {"converged", sol.converged},
                    {"morse_index", mi.index},
                    {"eigenvalues", mi.eigenvalues},
                    {"mu1", eig.mu1},
                    {"mu1_bound", (1.0 - params.p) * params.lambda},
                    {"phi_negative", morse_lower_bound_upstairs(phi)},
                    {"phi_k", qs},
                    {"monte_carlo", mc},
                    {"version", version_tag()}}
                       .dump(2) + "\n");
  std::printf("lambda=%g morse=%d mu1=%.10g (bound %.6g) phi-negative=%d\n", params.lambda, mi.index, eig.mu1,
              (1.0 - params.p) * params.lambda, morse_lower_bound_upstairs(phi));
  if (!mc.is_null())
    std::printf("Q(Phi^%d): quadrature %.6g, Monte Carlo %.6g +- %.3g\n", cfg.k_min, phi.front().Q_value,
                mc["value"].get<double>(), mc["std_error"].get<double>());
  return sol.converged ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annred: reduction, solves and asymptotics for semilinear problems on annuli"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_tag());

  Common verify_c, solve_c, sweep_c, gs_c, spec_c;
  bool corrupt = false;
  std::string kind = "positive";
  bool resume = false;
  int interrupt_after = 0;
  int gs_N = 0;
  double gs_p = 0.0;

  auto* verify = app.add_subcommand("verify-reduction", "check the discrete Laplacian identity and round trips");
  add_common(verify, verify_c);
  verify->add_flag("--corrupt-transform", corrupt)->group("");
  auto* solve = app.add_subcommand("solve", "single positive or nodal solve with diagnostics");
  add_common(solve, solve_c);
  solve->add_option("--kind", kind, "positive or nodal")->check(CLI::IsMember({"positive", "nodal"}));
  auto* sweep = app.add_subcommand("sweep", "lambda sweep with trend flags");
  add_common(sweep, sweep_c);
  sweep->add_flag("--resume", resume, "reuse persisted rows");
  sweep->add_option("--interrupt-after", interrupt_after)->group("");
  auto* gs = app.add_subcommand("ground-state", "radial ground state of -Delta z + z = z^p");
  add_common(gs, gs_c);
  gs->add_option("--dimension", gs_N, "dimension N (default m+1)");
  gs->add_option("--exponent", gs_p, "exponent p (default from config)");
  auto* spec = app.add_subcommand("spectrum", "linearized spectrum and Q(Phi^k) at one lambda");
  add_common(spec, spec_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*verify) return cmd_verify(resolve(verify_c), corrupt);
    if (*solve) return cmd_solve(resolve(solve_c), kind);
    if (*sweep) return cmd_sweep(resolve(sweep_c), SweepControl{resume, interrupt_after});
    if (*gs) return cmd_ground_state(resolve(gs_c), gs_N, gs_p);
    if (*spec) return cmd_spectrum(resolve(spec_c));
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const ParameterError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  }
  return kUsage;
}
