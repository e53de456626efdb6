#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "annred/annred.hpp"

using namespace annred;

namespace {

constexpr double pi = std::numbers::pi;

// Ground state of -Delta z + z = z^3 in R^3 by an independent scipy shooting
// (DOP853, rtol 1e-13, 60 bisections); I cross-checked against the Pohozaev
// identity I = (1/2 - 1/4) int z^4.
constexpr double kZ0 = 4.337387679977014;
constexpr double kI3 = 18.897251287069174;

ProblemParams small_params(double lambda) {
  ProblemParams p;
  p.lambda = lambda;
  return p;
}

struct SmallCase {
  ProblemParams params;
  GridPtr grid;
  std::unique_ptr<ReducedProblem> prob;
  SolveOutcome positive;
  SolveOutcome nodal;
};

const SmallCase& small_case() {
  static const SmallCase c = [] {
    SmallCase s;
    s.params = small_params(30.0);
    s.grid = Grid::reduced(s.params, 64, 48);
    s.prob = std::make_unique<ReducedProblem>(s.params, s.grid);
    s.positive = solve_positive(*s.prob);
    s.nodal = solve_nodal(*s.prob);
    return s;
  }();
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Energy, gradient, Nehari constraint.

TEST(Nehari, GradientMatchesCentralDifferences) {
  const auto p = small_params(50.0);
  const auto g = Grid::reduced(p, 48, 32);
  const ReducedProblem prob(p, g);
  const Field v = prob.default_init(SolutionKind::positive, false);
  Eigen::VectorXd x = 5.0 * v.values();
  const Eigen::VectorXd grad = prob.euclidean_gradient(x);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> N01;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(x.size());
    for (int k : prob.laplacian().active) d[k] = N01(rng);
    const double h = 1e-4 / d.norm() * x.norm();
    const double fd = (prob.energy_of(x + h * d).total - prob.energy_of(x - h * d).total) / (2 * h);
    const double an = grad.dot(d);
    EXPECT_NEAR(fd, an, 1e-6 * std::abs(an)) << "direction " << trial;
  }
}

TEST(Nehari, RieszGradientIsWeightedEuclideanGradient) {
  const auto p = small_params(20.0);
  const auto g = Grid::reduced(p, 32, 24);
  const ReducedProblem prob(p, g);
  const Field v = prob.default_init(SolutionKind::nodal, false);
  const Eigen::VectorXd e = prob.euclidean_gradient(v.values());
  const Field r = prob.gradient(v);
  for (int k : prob.laplacian().active)
    EXPECT_NEAR(r.values()[k] * prob.volume()[k], e[k], 1e-9 * (std::abs(e[k]) + 1e-6));
}

TEST(Nehari, ProjectionLandsOnTheManifold) {
  const auto p = small_params(20.0);
  const ReducedProblem prob(p, Grid::reduced(p, 32, 24));
  const Field v = prob.default_init(SolutionKind::positive, false);
  const auto [t, w] = prob.nehari_project(v);
  EXPECT_GT(t, 0.0);
  EXPECT_LT(std::abs(prob.nehari_defect(w.values())), 1e-12);
  const Field n = prob.default_init(SolutionKind::nodal, false);
  const auto x = prob.nodal_project(n.values());
  const auto [dp, dm] = prob.nodal_defects(x);
  EXPECT_LT(std::abs(dp), 1e-12);
  EXPECT_LT(std::abs(dm), 1e-12);
}

TEST(Nehari, RejectsBadFields) {
  const auto p = small_params(20.0);
  const auto g = Grid::reduced(p, 32, 24);
  const ReducedProblem prob(p, g);
  EXPECT_THROW(prob.nehari_project(Field(g)), DegenerateError);
  Field b = Field::sample(g, [](double, double) { return 1.0; });
  EXPECT_THROW(prob.gradient(b), ContractError);
  const Field pos = prob.default_init(SolutionKind::positive, false);
  EXPECT_THROW(prob.nodal_project(pos.values()), DegenerateError);
  ProblemParams p3 = p;
  p3.m = 3;
  p3.p = 2.0;
  EXPECT_THROW(ReducedProblem(p, Grid::reduced(p3, 32, 24)), ShapeError);
  ProblemParams q = p;
  q.a = 1.2;
  EXPECT_THROW(ReducedProblem(q, g), ShapeError);
}

TEST(Nehari, PositiveSolveConverges) {
  const auto& c = small_case();
  const auto& s = c.positive;
  ASSERT_TRUE(s.converged);
  EXPECT_LE(s.residual_norm, 1e-8);
  EXPECT_LT(std::abs(s.nehari_defect_plus), 1e-10);
  EXPECT_GT(s.field.values().minCoeff(), -1e-12);
  EXPECT_EQ(count_nodal_regions(s.field), 1);
  EXPECT_LE(monotonicity_violation(s.field), 1e-8);
  for (std::size_t k = 1; k < s.energy_history.size(); ++k)
    EXPECT_LE(s.energy_history[k], s.energy_history[k - 1] * (1 + 1e-12));
  // Least energy: the value on the manifold is below that of the projected initial guess.
  const auto [t, w] = c.prob->nehari_project(c.prob->default_init(SolutionKind::positive, false));
  EXPECT_LT(s.energy.total, c.prob->energy(w).total);
}

TEST(Nehari, NodalSolveConverges) {
  const auto& c = small_case();
  const auto& s = c.nodal;
  ASSERT_TRUE(s.converged);
  EXPECT_LE(s.residual_norm, 1e-8);
  EXPECT_LT(std::abs(s.nehari_defect_plus), 1e-8);
  EXPECT_LT(std::abs(s.nehari_defect_minus), 1e-8);
  EXPECT_EQ(count_nodal_regions(s.field), 2);
  // Two positive bumps cost at least twice the least energy.
  EXPECT_GT(s.energy.total, 2.0 * c.positive.energy.total * (1 - 1e-6));
  const auto np = nodal_peak_diagnostics(s.field, c.params);
  EXPECT_TRUE(np.plus.on_axis);
  EXPECT_TRUE(np.minus.on_axis);
  EXPECT_NEAR(std::abs(np.plus.peak_phi - np.minus.peak_phi), pi, 1e-12);
}

TEST(Nehari, AxisAlignmentAndRegions) {
  const auto g = Grid::reduced(small_params(20.0), 32, 24);
  const Field f = Field::sample(g, [](double r, double t) { return (r - 0.5) * (2 - r) * std::cos(2 * t); });
  EXPECT_EQ(count_nodal_regions(f), 3);
  const Field h = Field::sample(g, [](double r, double t) { return (r - 0.5) * (2 - r) * std::exp(-(t - 2.5) * (t - 2.5)); });
  const Field a = align_axis(h);
  const auto pk = peak_diagnostics(a, small_params(20.0));
  EXPECT_LT(pk.peak_phi, pi / 2);
}

// ---------------------------------------------------------------------------
// Spectra.

TEST(Spectral, MorseIndicesOfSolutions) {
  const auto& c = small_case();
  const auto mp = morse_index(*c.prob, c.positive.field);
  EXPECT_EQ(mp.index, 1);
  EXPECT_FALSE(mp.indeterminate);
  EXPECT_EQ(mp.inertia, 1);
  const auto mn = morse_index(*c.prob, c.nodal.field);
  EXPECT_EQ(mn.index, 2);
  EXPECT_EQ(mn.inertia, 2);
}

TEST(Spectral, FirstEigenpairBelowBound) {
  const auto& c = small_case();
  const auto e = first_symmetric_eigenpair(*c.prob, c.positive.field);
  EXPECT_LE(e.mu1, (1 - c.params.p) * c.params.lambda);
  EXPECT_GT(e.g1.values().minCoeff(), -1e-10 * e.g1.values().maxCoeff());
  const auto up = lift_field(e.g1);
  EXPECT_NEAR(weighted_inner_product(up, up, MeasureKind::upstairs_volume), 1.0, 1e-12);
  // Rayleigh quotient in the 1/(2 rho) weight reproduces mu1.
  const auto L = linearized_operator(*c.prob, c.positive.field, MeasureKind::volume_over_2rho);
  const Eigen::VectorXd x = L.gather(e.g1.values());
  const SparseCM A = L.active_block();
  const Eigen::VectorXd B = L.active_weight();
  EXPECT_NEAR(x.dot(A * x) / (x.array().square() * B.array()).sum(), e.mu1, 1e-9 * std::abs(e.mu1));
}

TEST(Spectral, NuK) {
  EXPECT_EQ(nu_k(1, 2), 1.0);
  EXPECT_EQ(nu_k(3, 2), 9.0);
  EXPECT_EQ(nu_k(2, 4), 8.0);
  EXPECT_THROW(nu_k(0, 2), DomainError);
  EXPECT_THROW(nu_k(1, 1), DomainError);
}

TEST(Spectral, PhiKQuadraticFormIsAffineInNu) {
  const auto& c = small_case();
  const auto e = first_symmetric_eigenpair(*c.prob, c.positive.field);
  const auto reps = phi_k_reports(e.g1, c.positive.field, c.params, 1, 6);
  EXPECT_LE(phi_k_collinearity(reps), 1e-10);
  for (const auto& r : reps) {
    EXPECT_NEAR(r.Q_value, r.Q0 + r.nu_k * r.Q_ang, 1e-12 * std::abs(r.Q_value) + 1e-12);
    EXPECT_GT(r.Q_ang, 0.0);
  }
  // Same g1 for every k, so Q0 and Q_ang do not depend on k.
  EXPECT_NEAR(reps[0].Q0, reps[5].Q0, 1e-12 * std::abs(reps[0].Q0));
  EXPECT_EQ(morse_lower_bound_upstairs(reps),
            static_cast<int>(std::count_if(reps.begin(), reps.end(), [](const auto& r) { return r.Q_value < 0; })));
  EXPECT_THROW(phi_k_collinearity({reps[0], reps[1]}), ContractError);
}

TEST(Spectral, MonteCarloAgreesWithQuadrature) {
  const auto& c = small_case();
  const auto e = first_symmetric_eigenpair(*c.prob, c.positive.field);
  const auto q = quadratic_form_phi_k(e.g1, c.positive.field, c.params, 1);
  const auto mc = monte_carlo_phi_k(e.g1, c.positive.field, c.params, 1, 100000, 9);
  EXPECT_NEAR(mc.value, q.Q_value, 4 * mc.std_error + 0.02 * std::abs(q.Q_value));
  const auto mc2 = monte_carlo_phi_k(e.g1, c.positive.field, c.params, 1, 100000, 9);
  EXPECT_EQ(mc.value, mc2.value);
  ProblemParams p3 = c.params;
  p3.m = 3;
  EXPECT_THROW(monte_carlo_phi_k(e.g1, c.positive.field, p3, 1, 10, 1), ParameterError);
}

// ---------------------------------------------------------------------------
// Ground states and asymptotic diagnostics.

TEST(GroundState, ThreeDimensionalCubicMatchesIndependentShooting) {
  const auto gs = ground_state_shoot(3, 3.0);
  EXPECT_NEAR(gs.z0, kZ0, 1e-9);
  EXPECT_NEAR(gs.I / kI3, 1.0, 1e-8);
  EXPECT_NEAR(gs.value(0.0), gs.z0, 1e-12);
  EXPECT_GT(gs.s_max, 15.0);
  // Tail decays like e^{-s}/s.
  const double rate = log_decay_rate(gs, 8.0, 14.0);
  EXPECT_LT(rate, -1.0);
  EXPECT_GT(rate, -1.2);
}

TEST(GroundState, OneDimensionalSolitonClosedForm) {
  const auto gs = ground_state_shoot(1, 3.0);
  EXPECT_NEAR(gs.z0, std::sqrt(2.0), 1e-10);
  EXPECT_NEAR(gs.I, 4.0 / 3.0, 1e-9);
  for (double s : {0.3, 1.0, 2.5, 6.0})
    EXPECT_NEAR(gs.value(s), std::sqrt(2.0) / std::cosh(s), 1e-9) << "s = " << s;
  // General p: z(0) = ((p+1)/2)^{1/(p-1)}.
  const auto g5 = ground_state_shoot(1, 5.0);
  EXPECT_NEAR(g5.z0, std::pow(3.0, 0.25), 1e-9);
}

TEST(GroundState, RescalingIdentity) {
  const auto gs = ground_state_shoot(3, 3.0);
  for (double d : {0.5, 1.0, 2.0}) {
    const double c = 1.0 / (2.0 * d);
    const auto wd = ground_state_shoot(3, 3.0, c, c);
    EXPECT_NEAR(wd.z0, gs.z0, 1e-9);
    for (double s : {0.5, 1.0, 2.0, 4.0}) EXPECT_NEAR(wd.value(s), gs.value(s * std::sqrt(c)), 1e-8);
    EXPECT_NEAR(wd.I / (std::sqrt(2.0 * d) * gs.I), 1.0, 1e-8);
    EXPECT_NEAR(limit_energy(d, gs), std::sqrt(2.0 * d) * gs.I, 1e-12 * gs.I);
  }
}

TEST(GroundState, RejectsInvalidInput) {
  EXPECT_THROW(ground_state_shoot(3, 5.0), ParameterError);
  EXPECT_THROW(ground_state_shoot(3, 1.0), ParameterError);
  EXPECT_THROW(ground_state_shoot(0, 3.0), ParameterError);
  EXPECT_THROW(ground_state_shoot(3, 3.0, -1.0), ParameterError);
  const auto gs = ground_state_shoot(3, 3.0);
  EXPECT_THROW(limit_energy(0.0, gs), DomainError);
  const auto scaled = ground_state_shoot(3, 3.0, 2.0, 2.0);
  EXPECT_THROW(limit_energy(1.0, scaled), ContractError);
}

TEST(GroundState, EnergyScaleExponent) {
  const auto gs = ground_state_shoot(3, 3.0);
  ProblemParams p = small_params(100.0);
  // N = 3, p = 3: lambda^{2 - 3/2} sqrt(2 R1) I.
  EXPECT_NEAR(energy_scale(p, 0.5, gs), 10.0 * gs.I, 1e-12 * gs.I);
}

TEST(Peaks, RefinedLocationOfSyntheticSpike) {
  const auto p = small_params(100.0);
  const auto g = Grid::reduced(p, 151, 64);
  const double rc = 0.8137, width = 0.05;
  const Field v = Field::sample(g, [&](double r, double t) {
    const double d2 = r * r + rc * rc - 2 * r * rc * std::cos(t);
    return std::exp(-d2 / (2 * width * width));
  });
  const auto pk = peak_diagnostics(v, p);
  EXPECT_TRUE(pk.on_axis);
  EXPECT_NEAR(pk.peak_rho, rc, 2e-4);
  EXPECT_NEAR(pk.inner_excess, rc - 0.5, 2e-4);
  EXPECT_NEAR(pk.scaled_distance, 10.0 * (rc - 0.5), 2e-3);
  EXPECT_THROW(peak_diagnostics(Field(g), p), DegenerateError);
  EXPECT_NEAR(sup_outside_ball(v, rc, 0.0, 0.3), std::exp(-0.09 / (2 * width * width)), 1e-3);
}

TEST(Peaks, NodalSeparationDownstairsAndLifted) {
  const auto p = small_params(100.0);
  const auto g = Grid::reduced(p, 121, 64);
  const double rc = 0.8;
  const Field v = Field::sample(g, [&](double r, double t) {
    auto bump = [&](double c) { return std::exp(-(r * r + rc * rc - 2 * r * rc * std::cos(t - c)) / 0.005); };
    return bump(0.0) - bump(pi);
  });
  const auto np = nodal_peak_diagnostics(v, p);
  EXPECT_NEAR(np.separation, 2 * rc, 1e-3);
  // Lifted points (sqrt(2 rho), 0) and (0, sqrt(2 rho)) in the quarter plane.
  EXPECT_NEAR(np.lifted_separation, std::sqrt(2.0) * std::sqrt(2 * rc), 2e-3);
  const Field pos = Field::sample(g, [](double r, double) { return (r - 0.5) * (2 - r); });
  EXPECT_THROW(nodal_peak_diagnostics(pos, p), DegenerateError);
}

namespace {

SweepRow trend_row(double lam, double excess, double ratio, double mu1, int phi) {
  SweepRow r;
  r.lambda = lam;
  r.ok = true;
  r.inner_excess = excess;
  r.scaled_distance = std::sqrt(lam) * excess;
  r.sup_outside = 10.0 / lam;
  r.energy_ratio = ratio;
  r.mu1 = mu1;
  r.mu1_bound = -2.0 * lam;
  r.phi_negative = phi;
  return r;
}

}  // namespace

TEST(Trends, AllFlagsPassOnConcentratingSequence) {
  const auto rep = concentration_report({trend_row(50, 0.3, 1.3, -900, 2), trend_row(100, 0.25, 1.2, -1800, 3),
                                         trend_row(200, 0.2, 1.1, -3600, 3), trend_row(400, 0.15, 1.05, -7000, 5)});
  for (const auto& f : rep.flags) EXPECT_EQ(f.status, Trend::pass) << f.name;
  EXPECT_TRUE(rep.all_pass());
}

TEST(Trends, ViolationsAreFlagged) {
  auto rows = std::vector<SweepRow>{trend_row(50, 0.3, 1.3, -900, 2), trend_row(100, 0.31, 1.2, -1800, 3),
                                    trend_row(200, 0.2, 0.7, -100, 3)};
  const auto rep = concentration_report(rows);
  EXPECT_EQ(rep.flag("peak_approaches_inner_sphere")->status, Trend::fail);
  EXPECT_EQ(rep.flag("energy_ratio_monotone")->status, Trend::fail);
  EXPECT_EQ(rep.flag("energy_ratio_final")->status, Trend::fail);
  EXPECT_EQ(rep.flag("mu1_below_bound")->status, Trend::fail);
  EXPECT_EQ(rep.flag("mu1_decreasing")->status, Trend::fail);
  EXPECT_FALSE(rep.all_pass());
}

TEST(Trends, FailedRowsAreExcludedButFailTrends) {
  auto rows = std::vector<SweepRow>{trend_row(50, 0.3, 1.3, -900, 2), trend_row(100, 0.25, 1.2, -1800, 3),
                                    trend_row(200, 0.2, 1.1, -3600, 3)};
  rows[1].ok = false;
  rows[1].mu1 = 1e9;
  const auto rep = concentration_report(rows);
  EXPECT_EQ(rep.flag("all_rows_converged")->status, Trend::fail);
  EXPECT_EQ(rep.flag("mu1_below_bound")->status, Trend::pass);
  EXPECT_EQ(rep.flag("peak_approaches_inner_sphere")->status, Trend::fail);
}

TEST(Trends, ShortSweepsAreNotApplicable) {
  const auto rep = concentration_report({trend_row(50, 0.3, 1.3, -900, 2), trend_row(100, 0.25, 1.2, -1800, 3)});
  EXPECT_EQ(rep.flag("peak_approaches_inner_sphere")->status, Trend::not_applicable);
  EXPECT_EQ(rep.flag("mu1_below_bound")->status, Trend::pass);
  EXPECT_TRUE(rep.all_pass());
  EXPECT_THROW(concentration_report({trend_row(100, 0.3, 1, -1, 1), trend_row(50, 0.2, 1, -2, 1)}), ContractError);
  EXPECT_THROW(concentration_report({trend_row(100, 0.3, 1, -1, 1), trend_row(100, 0.2, 1, -2, 1)}), ContractError);
}
