#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include "annred/annred.hpp"

using namespace annred;

namespace {

constexpr double pi = std::numbers::pi;

// Continuum values on D = {0.5 < |z| < 2} in R^3, from adaptive quadrature
// (scipy dblquad, 1e-13) for v = 2 (rho - 1/2)(2 - rho)(1 + cos(phi)/2), lambda = 10, p = 3.
constexpr double kEnergyDirichlet = 59.2582914283375;
constexpr double kEnergyMass = 43.0741805238288;
constexpr double kEnergyPower = 2.89951952825581;
constexpr double kEnergyTotal = 99.4329524239105;

// Dirichlet eigenvalues of -Laplace on the shell 0.5 < |z| < 2 in R^3 (axisymmetric
// modes), roots of j_l(k a) y_l(k b) - j_l(k b) y_l(k a) found with brentq.
constexpr double kShellEigen[] = {4.386490844929, 5.851946054872, 8.578215746710, 12.284569074148};

ProblemParams reference_params(double lambda = 100.0) {
  ProblemParams p;
  p.lambda = lambda;
  return p;
}

Field sample_energy_field(const GridPtr& g) {
  return Field::sample(g, [](double r, double t) { return 2 * (r - 0.5) * (2 - r) * (1 + 0.5 * std::cos(t)); });
}

WeightedOperator plain_laplacian(const ReducedProblem& prob) {
  WeightedOperator op;
  op.grid = prob.grid();
  op.active = prob.laplacian().active;
  op.self_adjoint = true;
  op.weight = prob.volume();
  op.form = -prob.laplacian().form;
  return op;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters and grids.

TEST(Params, SphereAreas) {
  EXPECT_DOUBLE_EQ(sphere_area(0), 2.0);
  EXPECT_NEAR(sphere_area(1), 2 * pi, 1e-14);
  EXPECT_NEAR(sphere_area(2), 4 * pi, 1e-14);
  EXPECT_NEAR(sphere_area(3), 2 * pi * pi, 1e-13);
  EXPECT_THROW(sphere_area(-1), ParameterError);
}

TEST(Params, ValidationAndDerivedQuantities) {
  ProblemParams p = reference_params();
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.reduced_dimension(), 3);
  EXPECT_EQ(p.full_dimension(), 4);
  EXPECT_DOUBLE_EQ(p.critical_exponent(), 5.0);
  const auto dom = ReducedDomain::from(p);
  EXPECT_DOUBLE_EQ(dom.R1, 0.5);
  EXPECT_DOUBLE_EQ(dom.R2, 2.0);

  auto bad = [](auto mutate) {
    ProblemParams q;
    mutate(q);
    return q;
  };
  EXPECT_THROW(bad([](ProblemParams& q) { q.m = 1; }).validate(), ParameterError);
  EXPECT_THROW(bad([](ProblemParams& q) { q.b = 0.5; }).validate(), ParameterError);
  EXPECT_THROW(bad([](ProblemParams& q) { q.a = 0.0; }).validate(), ParameterError);
  EXPECT_THROW(bad([](ProblemParams& q) { q.p = 5.0; }).validate(), ParameterError);
  EXPECT_THROW(bad([](ProblemParams& q) { q.p = 1.0; }).validate(), ParameterError);
  EXPECT_THROW(bad([](ProblemParams& q) { q.lambda = -1.0; }).validate(), ParameterError);
  EXPECT_THROW(bad([](ProblemParams& q) { q.lambda = std::numeric_limits<double>::infinity(); }).validate(),
               ParameterError);
}

TEST(Grid, UniformReducedGrid) {
  const auto g = Grid::reduced(reference_params(), 33, 17);
  EXPECT_EQ(g->n_radial(), 33);
  EXPECT_EQ(g->n_angular(), 17);
  EXPECT_DOUBLE_EQ(g->inner_radius(), 0.5);
  EXPECT_DOUBLE_EQ(g->outer_radius(), 2.0);
  EXPECT_DOUBLE_EQ(g->angular(0), 0.0);
  EXPECT_DOUBLE_EQ(g->angular_max(), pi);
  EXPECT_NEAR(g->radial_spacing(), 1.5 / 32, 1e-15);
  EXPECT_TRUE(g->is_dirichlet(0));
  EXPECT_TRUE(g->is_dirichlet(32));
  EXPECT_FALSE(g->is_dirichlet(1));
  EXPECT_THROW(Grid::reduced(reference_params(), 8, 32), ParameterError);
}

TEST(Grid, FieldShapeChecks) {
  const auto g = Grid::reduced(reference_params(), 16, 16);
  EXPECT_THROW(Field(g, Eigen::VectorXd::Zero(10)), ShapeError);
  EXPECT_THROW(Field(nullptr), ShapeError);
  const auto h = Grid::reduced(reference_params(), 16, 20);
  EXPECT_THROW(Field(g).require_same_grid(Field(h), "test"), ShapeError);
}

// ---------------------------------------------------------------------------
// Coordinates.

TEST(Coords, PointMapsAreInverse) {
  const auto params = reference_params();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> R(1.0, 2.0), T(0.0, pi / 2);
  for (int k = 0; k < 1000; ++k) {
    const PolarPoint2m y{R(rng), T(rng)};
    const auto z = reduce_point(y, params);
    EXPECT_NEAR(z.rho, 0.5 * y.r * y.r, 1e-15);
    EXPECT_NEAR(z.phi, 2 * y.theta, 1e-15);
    const auto back = lift_point(z, params);
    EXPECT_NEAR(back.r, y.r, 4e-16 * y.r);
    EXPECT_NEAR(back.theta, y.theta, 4e-16);
  }
}

TEST(Coords, PointMapsRejectOutOfRange) {
  const auto params = reference_params();
  EXPECT_THROW(reduce_point({0.9, 0.1}, params), DomainError);
  EXPECT_THROW(reduce_point({1.5, -0.1}, params), DomainError);
  EXPECT_THROW(reduce_point({1.5, 1.6}, params), DomainError);
  EXPECT_THROW(reduce_point({std::nan(""), 0.1}, params), DomainError);
  EXPECT_THROW(lift_point(PolarPointD{0.0, 0.1}), DomainError);
  EXPECT_THROW(lift_point(PolarPointD{1.0, 3.2}), DomainError);
  EXPECT_THROW(lift_point(PolarPointD{2.5, 1.0}, params), DomainError);
  EXPECT_NO_THROW(reduce_point({2.0, pi / 2}, params));
}

TEST(Coords, FieldRoundTripIsBitwise) {
  const auto g = Grid::reduced(reference_params(), 40, 21);
  const Field v = Field::sample(g, [](double r, double t) { return std::exp(-r) * std::sin(3 * t) + 1e-300; });
  const Field u = lift_field(v);
  EXPECT_EQ(u.grid().kind(), GridKind::annulus);
  EXPECT_EQ(u.grid().dimension(), 4);
  EXPECT_NEAR(u.grid().inner_radius(), 1.0, 1e-15);
  EXPECT_NEAR(u.grid().outer_radius(), 2.0, 1e-15);
  const Field back = reduce_field(u);
  ASSERT_TRUE(back.grid().same_as(*g));
  EXPECT_EQ(std::memcmp(back.values().data(), v.values().data(), sizeof(double) * v.values().size()), 0);
  EXPECT_THROW(reduce_field(v), ShapeError);
  EXPECT_THROW(lift_field(u), ShapeError);
}

TEST(Coords, LaplacianIdentityExactOnQuadratics) {
  const auto g = Grid::reduced(reference_params(), 48, 25);
  for (auto u : {UpstairsExpr([](double r, double) { return r * r; }),
                 UpstairsExpr([](double r, double t) { return r * r * std::cos(2 * t); }),
                 UpstairsExpr([](double, double) { return 1.0; })}) {
    const auto c = verify_laplacian_identity(u, g, 2);
    EXPECT_LT(c.max_discrepancy, 1e-10);
  }
}

TEST(Coords, LaplacianIdentitySecondOrder) {
  const auto u = [](double r, double t) { return std::sin(r) * std::cos(2 * t); };
  const auto p = reference_params();
  const double d1 = verify_laplacian_identity(u, Grid::reduced(p, 64, 33), 2).max_discrepancy;
  const double d2 = verify_laplacian_identity(u, Grid::reduced(p, 128, 65), 2).max_discrepancy;
  EXPECT_GT(std::log2(d1 / d2), 1.9);
}

TEST(Coords, LaplacianIdentityHigherM) {
  ProblemParams p = reference_params();
  p.m = 3;
  p.p = 2.0;
  const auto u = [](double r, double t) { return r * r * std::cos(2 * t); };
  const auto c = verify_laplacian_identity(u, Grid::reduced(p, 48, 25), 3);
  EXPECT_LT(c.max_discrepancy, 1e-10);
}

TEST(Coords, CorruptedLiftIsDetected) {
  const auto params = reference_params();
  const LiftMap off = [](const PolarPointD& pt) { return PolarPoint2m{std::sqrt(2.0 * pt.rho) * 1.001, 0.5 * pt.phi}; };
  const auto rep = verify_reduction_suite(params, off);
  EXPECT_FALSE(rep.all_pass());
  EXPECT_TRUE(verify_reduction_suite(params).all_pass());
}

// ---------------------------------------------------------------------------
// Discretization.

TEST(Disc, MeasuresIntegrateConstantsExactly) {
  const auto g = Grid::reduced(reference_params(), 37, 19);
  const double vol = nodal_measure(*g, MeasureKind::volume).sum();
  EXPECT_NEAR(vol, 4.0 * pi / 3.0 * (8.0 - 0.125), 1e-12 * vol);
  // Node-scaled by 1/(2 rho_i), so only second-order accurate.
  const double vol2 = nodal_measure(*g, MeasureKind::volume_over_2rho).sum();
  EXPECT_NEAR(vol2, pi * (4.0 - 0.25), 2e-4 * vol2);
  const auto up = lift_grid(g);
  const double vup = nodal_measure(*up, MeasureKind::upstairs_volume).sum();
  EXPECT_NEAR(vup, 0.5 * pi * pi * (16.0 - 1.0), 1e-12 * vup);
  EXPECT_THROW(nodal_measure(*g, MeasureKind::upstairs_volume), ShapeError);
}

TEST(Disc, UpstairsMeasureIsExactCellIntegral) {
  // For m = 2, dV_A = 2 pi^2 rho sin(phi) d rho d phi in reduced coordinates.
  const auto g = Grid::reduced(reference_params(), 33, 17);
  const auto up = nodal_measure(*lift_grid(g), MeasureKind::upstairs_volume);
  const auto& er = g->radial_edges();
  const auto& ea = g->angular_edges();
  for (int i = 0; i < g->n_radial(); ++i)
    for (int j = 0; j < g->n_angular(); ++j) {
      const double r0 = std::clamp(er[i], 0.5, 2.0), r1 = std::clamp(er[i + 1], 0.5, 2.0);
      const double a0 = std::clamp(ea[j], 0.0, pi), a1 = std::clamp(ea[j + 1], 0.0, pi);
      const double exact = 2 * pi * pi * 0.5 * (r1 * r1 - r0 * r0) * (std::cos(a0) - std::cos(a1));
      EXPECT_NEAR(up[g->index(i, j)], exact, 1e-12 * exact);
    }
}

TEST(Disc, EnergyConvergesToContinuumValue) {
  ProblemParams p = reference_params(10.0);
  double prev = 0.0;
  for (int n : {64, 128}) {
    const auto g = Grid::reduced(p, n, n / 2);
    const ReducedProblem prob(p, g);
    const auto e = prob.energy(sample_energy_field(g));
    const double err = std::abs(e.total - kEnergyTotal);
    EXPECT_NEAR(e.dirichlet, kEnergyDirichlet, 0.02 * 64.0 / n);
    EXPECT_NEAR(e.mass, kEnergyMass, 0.01 * 64.0 / n);
    EXPECT_NEAR(e.power, kEnergyPower, 0.002 * 64.0 / n);
    if (prev > 0.0) EXPECT_GT(std::log2(prev / err), 1.8);
    prev = err;
  }
  EXPECT_LT(prev, 3e-3);
}

TEST(Disc, ShellEigenvaluesMatchBesselRoots) {
  ProblemParams p = reference_params(10.0);
  const auto g = Grid::reduced(p, 128, 64);
  const ReducedProblem prob(p, g);
  const auto spec = eigs_smallest(plain_laplacian(prob), 4);
  ASSERT_EQ(spec.eigenvalues.size(), 4u);
  EXPECT_NEAR(spec.eigenvalues[0] / kShellEigen[0], 1.0, 3e-5);
  EXPECT_NEAR(spec.eigenvalues[1] / kShellEigen[1], 1.0, 3e-5);
  EXPECT_NEAR(spec.eigenvalues[2] / kShellEigen[2], 1.0, 1e-3);
  EXPECT_NEAR(spec.eigenvalues[3] / kShellEigen[3], 1.0, 2e-3);
  for (double r : spec.inverse_residuals) EXPECT_LE(r, 1e-8);
  EXPECT_EQ(spec.count_negative, 0);
}

TEST(Disc, LaplacianKillsConstantsAndIsSymmetric) {
  const auto p = reference_params();
  const auto g = Grid::reduced(p, 40, 20);
  const ReducedProblem prob(p, g);
  const Field one = Field::sample(g, [](double, double) { return 1.0; });
  EXPECT_LT(prob.laplacian().apply(one).values().cwiseAbs().maxCoeff(), 1e-9);
  const SparseCM A = prob.laplacian().active_block();
  const SparseCM At = A.transpose();
  EXPECT_LT((A - At).norm(), 1e-12 * A.norm());
}

// ---------------------------------------------------------------------------
// Configuration.

TEST(Config, ParsesKnownKeys) {
  const auto c = parse_config("m: 2\na: 1.0\nb: 2.0\np: 3\nlambdas: [50, 100]\nn_rho: 64\nn_phi: 32\nseed: 5\nout: x\n");
  EXPECT_EQ(c.n_rho, 64);
  EXPECT_EQ(c.n_phi, 32);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.out_dir, "x");
  ASSERT_EQ(c.lambdas.size(), 2u);
  EXPECT_DOUBLE_EQ(c.lambdas[1], 100.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, EpsilonFormsConvert) {
  const auto c = parse_config("epsilon: 0.1\nepsilons: [0.1, 0.05]\n");
  EXPECT_NEAR(c.params.lambda, 100.0, 1e-12);
  ASSERT_EQ(c.lambdas.size(), 2u);
  EXPECT_NEAR(c.lambdas[0], 100.0, 1e-12);
  EXPECT_NEAR(c.lambdas[1], 400.0, 1e-10);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("bogus: 1\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda: 1\nepsilon: 0.5\n"), ConfigError);
  EXPECT_THROW(parse_config("lambdas: [1]\nepsilons: [0.5]\n"), ConfigError);
  EXPECT_THROW(parse_config("n_rho: many\n"), ConfigError);
  EXPECT_THROW(parse_config("- 1\n- 2\n"), ConfigError);
  EXPECT_THROW(parse_config("a: [1\n"), ConfigError);
  EXPECT_THROW(parse_config("epsilon: 0\n"), ConfigError);
  EXPECT_THROW(parse_config("lambdas: [100, 50]\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("n_phi: 4\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("p: 7\n").validate(), ParameterError);
  EXPECT_THROW(load_config("/nonexistent/annred.yaml"), ConfigError);
}

TEST(Config, EnvironmentOverrides) {
  const std::map<std::string, std::string> env = {{"ANNRED_N_RHO", "80"}, {"ANNRED_LAMBDAS", "[10, 20, 30]"}};
  RunConfig c;
  apply_env_overrides(c, [&](const char* k) -> const char* {
    const auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.n_rho, 80);
  ASSERT_EQ(c.lambdas.size(), 3u);
  EXPECT_DOUBLE_EQ(c.lambdas[2], 30.0);
}

TEST(Config, SnapshotReparsesToSameConfig) {
  RunConfig c = parse_config("lambda: 123.456\nlambdas: [1.5, 2.25]\nworkers: 3\nnodal: false\n");
  const std::string snap = config_snapshot_yaml(c);
  const RunConfig d = parse_config(snap);
  EXPECT_EQ(config_snapshot_yaml(d), snap);
  EXPECT_DOUBLE_EQ(d.params.lambda, 123.456);
  EXPECT_FALSE(d.nodal);
}

// ---------------------------------------------------------------------------
// I/O.

TEST(Io, LittleEndianRoundTripIsBitwise) {
  Eigen::VectorXd v(6);
  v << 0.0, -0.0, 1.0 / 3.0, -1e-310, std::numeric_limits<double>::infinity(), std::nan("");
  const std::string bytes = encode_le(v);
  ASSERT_EQ(bytes.size(), 48u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[15]), 0x80);  // sign bit of -0.0, little-endian
  const auto w = decode_le(bytes);
  EXPECT_EQ(std::memcmp(v.data(), w.data(), 48), 0);
  EXPECT_THROW(decode_le("abc"), ShapeError);
}

TEST(Io, FieldDumpRoundTrip) {
  const auto dir = fs::temp_directory_path() / "annred_io_test";
  fs::remove_all(dir);
  const auto g = Grid::reduced(reference_params(), 20, 17);
  const Field v = Field::sample(g, [](double r, double t) { return r * std::cos(t) / 3.0; });
  dump_field(v, dir / "f", json{{"tag", 1}});
  const Field w = load_field(dir / "f");
  EXPECT_TRUE(w.grid().same_as(*g));
  EXPECT_EQ(std::memcmp(v.values().data(), w.values().data(), sizeof(double) * v.values().size()), 0);
  EXPECT_FALSE(fs::exists(dir / "f.bin.tmp"));
  fs::remove_all(dir);
}

TEST(Io, LambdaTagIsExactAndPathSafe) {
  EXPECT_EQ(lambda_tag(100.0), "100");
  EXPECT_EQ(lambda_tag(0.5), "0p5");
  EXPECT_NE(lambda_tag(0.1), lambda_tag(std::nextafter(0.1, 1.0)));
  EXPECT_EQ(lambda_tag(1e300).find('+'), std::string::npos);
}

TEST(Io, RowJsonRoundTrip) {
  SweepRow r;
  r.lambda = 50;
  r.ok = true;
  r.error = "none";
  r.energy = 1.0 / 7.0;
  r.phi_q = {-1.5, 2.5};
  r.morse_index = 1;
  r.on_axis = true;
  r.nodal_lifted_separation = 1.25;
  const SweepRow s = row_from_json(json::parse(row_to_json(r).dump()));
  EXPECT_EQ(s.lambda, r.lambda);
  EXPECT_EQ(s.energy, r.energy);
  EXPECT_EQ(s.phi_q, r.phi_q);
  EXPECT_EQ(s.morse_index, 1);
  EXPECT_TRUE(s.on_axis);
  EXPECT_EQ(s.error, "none");
  EXPECT_EQ(s.nodal_lifted_separation, 1.25);
}

TEST(Io, CsvHasSchemaHeaderAndFixedColumns) {
  SweepRow r;
  r.lambda = 10;
  r.phi_q = {1, 2, 3};
  const std::string csv = sweep_csv({r, r}, 1, 3);
  const auto cols = sweep_columns(1, 3);
  std::istringstream in(csv);
  std::string line;
  int comments = 0, data = 0;
  while (std::getline(in, line)) {
    if (line.rfind("#", 0) == 0) {
      ++comments;
      continue;
    }
    EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')), cols.size() - 1);
    ++data;
  }
  EXPECT_EQ(comments, static_cast<int>(cols.size()) + 1);
  EXPECT_EQ(data, 3);
  EXPECT_NE(csv.find("# column energy_ratio [1]"), std::string::npos);
  EXPECT_NE(csv.find("Q_phi_3"), std::string::npos);
}

TEST(Io, WriteAtomicReplacesContent) {
  const auto path = fs::temp_directory_path() / "annred_atomic_test" / "a.txt";
  write_atomic(path, "one");
  write_atomic(path, "two");
  EXPECT_EQ(read_file(path), "two");
  fs::remove_all(path.parent_path());
}
