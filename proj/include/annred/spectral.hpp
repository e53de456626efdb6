#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "annred/coords.hpp"
#include "annred/disc.hpp"
#include "annred/errors.hpp"
#include "annred/nehari.hpp"

namespace annred {

struct Spectrum {
  std::vector<double> eigenvalues;
  std::vector<Field> eigenfields;
  int count_negative = 0;
  /// ||L g - mu W g||_{W^-1} / ||g||_W per pair.
  std::vector<double> residuals;
  /// ||(L - shift W)^-1 W g - theta g||_W / |theta| per pair, the accepted measure.
  std::vector<double> inverse_residuals;
  double shift = 0.0;
  int lanczos_steps = 0;
};

struct EigOptions {
  /// Tolerance on the relative residual of the shift-inverted problem.
  double tol = 1e-8;
  int max_basis = 300;
  std::uint64_t seed = 20240611;
};

/// L_v = -Delta + (lambda - p|v|^(p-1))/(2 rho). The bilinear form is the same
/// for both measures; the measure decides the eigenproblem:
///   volume            L g = mu g
///   volume_over_2rho  2 rho L g = mu g   (the reduced form of the upstairs problem)
inline WeightedOperator linearized_operator(const ReducedProblem& prob, const Field& v,
                                            MeasureKind measure = MeasureKind::volume) {
  if (measure == MeasureKind::upstairs_volume) throw ShapeError("linearized_operator lives downstairs");
  if (!v.grid().same_as(*prob.grid())) throw ShapeError("linearized_operator: field on another grid");
  const auto& lap = prob.laplacian();
  const double lam = prob.params().lambda, p = prob.params().p;
  WeightedOperator op;
  op.grid = prob.grid();
  op.active = lap.active;
  op.self_adjoint = true;
  op.weight = measure == MeasureKind::volume ? prob.volume() : prob.volume_over_2rho();
  op.form = -lap.form;
  op.potential = Eigen::VectorXd::Zero(op.grid->size());
  for (int k : op.active) {
    const double V = lam - p * std::pow(std::abs(v.values()[k]), p - 1.0);
    const double wv = prob.volume_over_2rho()[k] * V;
    op.form.coeffRef(k, k) += wv;
    op.potential[k] = wv / op.weight[k];
  }
  op.form.makeCompressed();
  return op;
}

namespace detail {

inline double b_dot(const Eigen::VectorXd& x, const Eigen::VectorXd& B, const Eigen::VectorXd& y) {
  return (x.array() * B.array() * y.array()).sum();
}

/// Lower bound for the spectrum of (A, B): the coupling part is positive
/// semidefinite, so mu >= min potential. Falls back to Gershgorin.
inline double spectral_lower_bound(const WeightedOperator& L, const SparseCM& A, const Eigen::VectorXd& B) {
  if (L.potential.size()) {
    double lo = std::numeric_limits<double>::infinity();
    for (int k : L.active) lo = std::min(lo, L.potential[k]);
    return lo;
  }
  Eigen::VectorXd row_off = Eigen::VectorXd::Zero(A.rows());
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(A.rows());
  for (int c = 0; c < A.outerSize(); ++c)
    for (SparseCM::InnerIterator it(A, c); it; ++it) {
      if (it.row() == it.col()) diag[it.row()] = it.value();
      else row_off[it.row()] += std::abs(it.value()) / std::sqrt(B[it.row()] * B[it.col()]);
    }
  return (diag.array() / B.array() - row_off.array()).minCoeff();
}

struct LanczosResult {
  /// Ritz pairs for the smallest unlocked eigenvalues, ascending; the first
  /// `converged` of them meet the tolerance.
  std::vector<double> mu;
  std::vector<Eigen::VectorXd> vec;
  std::vector<double> resid;
  std::vector<double> inverse_resid;
  int converged = 0;
  int steps = 0;
};

/// Shift-invert Lanczos on T = (A - sigma B)^-1 B with full B-reorthogonalization,
/// restricted to the B-orthogonal complement of `locked`. sigma must lie below
/// every unlocked eigenvalue, so the wanted pairs are the largest positive theta.
template <class Factor>
LanczosResult lanczos(const SparseCM& A, const Eigen::VectorXd& B, const Factor& solver, double sigma, int k,
                      const std::vector<Eigen::VectorXd>& locked, double tol, std::uint64_t seed, int max_steps) {
  const int n = static_cast<int>(A.rows());
  auto deflate = [&](Eigen::VectorXd& z) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& x : locked) z -= b_dot(x, B, z) * x;
  };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Eigen::VectorXd q(n);
  for (int i = 0; i < n; ++i) q[i] = 1.0 + 0.5 * U(rng);
  deflate(q);
  q /= std::sqrt(b_dot(q, B, q));

  std::vector<Eigen::VectorXd> Q;
  std::vector<double> alpha, beta;
  LanczosResult res;
  const int cap = std::min(max_steps, n - static_cast<int>(locked.size()));
  auto Bnorm_inv = [&](const Eigen::VectorXd& r) { return std::sqrt((r.array().square() / B.array()).sum()); };

  for (int j = 0; j < cap; ++j) {
    Q.push_back(q);
    Eigen::VectorXd z = solver.solve((B.array() * q.array()).matrix());
    const double a = b_dot(q, B, z);
    alpha.push_back(a);
    deflate(z);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& qi : Q) z -= b_dot(qi, B, z) * qi;
    const double b = std::sqrt(std::max(0.0, b_dot(z, B, z)));
    res.steps = j + 1;

    const int m = static_cast<int>(alpha.size());
    const bool exhausted = m == cap || b < 1e-14 * std::abs(a);
    if (m >= k && (m % 5 == 0 || exhausted)) {
      Eigen::VectorXd d = Eigen::Map<Eigen::VectorXd>(alpha.data(), m);
      Eigen::VectorXd e = m > 1 ? Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(beta.data(), m - 1)) : Eigen::VectorXd();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
      es.computeFromTridiagonal(d, e, Eigen::ComputeEigenvectors);
      // Cheap convergence estimate |b s_m| first; full residuals only for the leading run.
      int lead = 0;
      for (int t = 0; t < k; ++t) {
        const int idx = m - 1 - t;
        const double theta = es.eigenvalues()[idx];
        if (!(theta > 0.0)) break;
        if (!exhausted && std::abs(b * es.eigenvectors()(m - 1, idx)) > std::max(tol, 1e-6) * theta) break;
        ++lead;
      }
      if (lead > 0 && (lead == k || exhausted || m % 20 == 0)) {
        LanczosResult out;
        out.steps = res.steps;
        for (int t = 0; t < lead; ++t) {
          const int idx = m - 1 - t;
          const Eigen::VectorXd s = es.eigenvectors().col(idx);
          Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
          for (int i = 0; i < m; ++i) g += s[i] * Q[i];
          deflate(g);
          g /= std::sqrt(b_dot(g, B, g));
          const double theta = es.eigenvalues()[idx];
          Eigen::VectorXd y = solver.solve((B.array() * g.array()).matrix());
          deflate(y);
          const double ri = std::sqrt(b_dot(y - theta * g, B, y - theta * g)) / theta;
          if (ri > tol) break;
          const double muv = sigma + 1.0 / theta;
          const Eigen::VectorXd r = A * g - muv * (B.array() * g.array()).matrix();
          out.mu.push_back(muv);
          out.resid.push_back(Bnorm_inv(r));
          out.inverse_resid.push_back(ri);
          out.vec.push_back(std::move(g));
          ++out.converged;
        }
        if (out.converged == k || (exhausted && out.converged > 0) || out.converged >= std::max(1, k / 2))
          return out;
      }
      if (exhausted) return res;
    }
    beta.push_back(b);
    q = z / b;
  }
  return res;
}

/// A - sigma B factorized by LDL'; fails when a pivot vanishes.
inline std::unique_ptr<Eigen::SimplicialLDLT<SparseCM>> shifted_factor(const SparseCM& A, const Eigen::VectorXd& B,
                                                                      double sigma) {
  SparseCM S = A;
  for (int i = 0; i < S.rows(); ++i) S.coeffRef(i, i) -= sigma * B[i];
  auto f = std::make_unique<Eigen::SimplicialLDLT<SparseCM>>(S);
  if (f->info() != Eigen::Success) return nullptr;
  return f;
}

inline int negative_pivots(const Eigen::SimplicialLDLT<SparseCM>& f) {
  return static_cast<int>((f.vectorD().array() < 0.0).count());
}

}  // namespace detail

/// k smallest eigenpairs of form g = mu weight g on the active unknowns.
/// Pairs are locked as they converge; each round shifts just below the next
/// unlocked eigenvalue, verified by the inertia of A - sigma B.
inline Spectrum eigs_smallest(const WeightedOperator& L, int k, const EigOptions& opt = {}) {
  if (!L.grid) throw ShapeError("eigs_smallest: operator without grid");
  const int n = static_cast<int>(L.active.size());
  if (k < 1 || k > n / 4) throw ParameterError("eigs_smallest: need 1 <= k << grid size");
  const SparseCM A = L.active_block();
  const Eigen::VectorXd B = L.active_weight();

  const double lo = detail::spectral_lower_bound(L, A, B);
  double floor_shift = lo - 1e-2 * std::max(1.0, std::abs(lo));
  std::vector<Eigen::VectorXd> locked;
  std::vector<double> mu, resid, iresid;
  Spectrum out;
  out.shift = floor_shift;
  int round = 0;
  while (static_cast<int>(locked.size()) < k) {
    if (++round > 4 * k + 8) throw ConvergenceError("eigs_smallest: round limit reached", {}, resid);
    const int nl = static_cast<int>(locked.size());
    auto below = [&](double x) {
      return static_cast<int>(std::count_if(mu.begin(), mu.end(), [&](double v) { return v < x; }));
    };
    auto base = detail::shifted_factor(A, B, floor_shift);
    if (!base || detail::negative_pivots(*base) != below(floor_shift))
      throw ConvergenceError("eigs_smallest: shift-invert factorization failed", {}, resid);
    // Locate the next eigenvalue roughly, then move the shift just below it.
    const auto coarse = detail::lanczos(A, B, *base, floor_shift, 1, locked, 1e-3, opt.seed + round, 80);
    double sigma = floor_shift;
    auto factor = std::move(base);
    if (coarse.converged > 0) {
      const double next = coarse.mu[0];
      double delta = std::max(1e-2 * std::abs(next - floor_shift), 1e-6 * std::max(1.0, std::abs(next)));
      for (int attempt = 0; attempt < 40; ++attempt) {
        const double trial = next - delta;
        if (trial <= floor_shift) break;
        auto f = detail::shifted_factor(A, B, trial);
        if (f && detail::negative_pivots(*f) == below(trial)) {
          sigma = trial;
          factor = std::move(f);
          break;
        }
        delta *= 2.0;
      }
    }
    out.shift = sigma;
    auto res = detail::lanczos(A, B, *factor, sigma, k - nl, locked, opt.tol, opt.seed, opt.max_basis);
    out.lanczos_steps += res.steps + coarse.steps;
    if (res.converged == 0) throw ConvergenceError("eigs_smallest: no Ritz pair converged", {}, res.resid);
    for (int t = 0; t < res.converged; ++t) {
      locked.push_back(std::move(res.vec[t]));
      mu.push_back(res.mu[t]);
      resid.push_back(res.resid[t]);
      iresid.push_back(res.inverse_resid[t]);
    }
    // Next floor: as far above the locked values as the inertia allows, so the
    // locked directions are not amplified by the shift. If a degenerate partner
    // sits right there, the current shift stays valid.
    const double top = *std::max_element(mu.begin(), mu.end());
    floor_shift = sigma;
    for (double gap = 0.25; gap >= 1e-9; gap *= 0.1) {
      const double above = top + gap * std::max(1.0, std::abs(top));
      auto probe = detail::shifted_factor(A, B, above);
      if (probe && detail::negative_pivots(*probe) == below(above)) {
        floor_shift = above;
        break;
      }
    }
  }
  std::vector<int> order(k);
  for (int i = 0; i < k; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return mu[a] < mu[b]; });
  for (int idx : order) {
    Eigen::VectorXd full = L.scatter(locked[idx]);
    if (full.sum() < 0) full = -full;
    out.eigenvalues.push_back(mu[idx]);
    out.residuals.push_back(resid[idx]);
    out.inverse_residuals.push_back(iresid[idx]);
    out.eigenfields.emplace_back(L.grid, full);
  }
  out.count_negative =
      static_cast<int>(std::count_if(out.eigenvalues.begin(), out.eigenvalues.end(), [](double m) { return m < 0; }));
  return out;
}

/// Number of negative pivots of an LDL' factorization (Sylvester inertia).
inline int inertia_negative(const SparseCM& A) {
  Eigen::SimplicialLDLT<SparseCM> ldlt(A);
  if (ldlt.info() != Eigen::Success) return -1;
  return static_cast<int>((ldlt.vectorD().array() < 0.0).count());
}

struct MorseResult {
  int index = 0;
  bool indeterminate = false;
  /// Eigenvalues within tol_eig of zero.
  std::vector<double> uncertain;
  std::vector<double> eigenvalues;
  /// Same count from the inertia of the factorized operator (-1 if the
  /// factorization broke down).
  int inertia = -1;
};

/// Morse index in the axially symmetric class: negative eigenvalues of L_v,
/// computed until a positive eigenvalue shows up.
inline MorseResult morse_index(const ReducedProblem& prob, const Field& v, double tol_eig_rel = 1e-8,
                               const EigOptions& opt = {}) {
  const auto L = linearized_operator(prob, v, MeasureKind::volume);
  const double tol = tol_eig_rel * prob.params().lambda;
  MorseResult out;
  for (int k = 4; k <= 64; k *= 2) {
    const auto spec = eigs_smallest(L, k, opt);
    out.eigenvalues = spec.eigenvalues;
    if (spec.eigenvalues.back() > tol) break;
  }
  out.uncertain.clear();
  out.index = 0;
  for (double mu : out.eigenvalues) {
    if (mu < -tol) ++out.index;
    else if (std::abs(mu) <= tol) out.uncertain.push_back(mu);
  }
  out.indeterminate = !out.uncertain.empty() || out.eigenvalues.back() <= tol;
  out.inertia = inertia_negative(L.active_block());
  return out;
}

struct SymmetricEigenpair {
  double mu1 = 0.0;
  /// On the reduced grid; normalized so that the lifted field has unit L^2(A) norm.
  Field g1;
  double residual = 0.0;
  int iterations = 0;
};

/// Smallest mu of -Delta h + (lambda - p|v|^(p-1)) h/(2 rho) = mu h/(2 rho),
/// by shifted inverse iteration with Rayleigh-quotient shift updates.
inline SymmetricEigenpair first_symmetric_eigenpair(const ReducedProblem& prob, const Field& v,
                                                    double tol = 1e-11, int max_iter = 200) {
  const auto L = linearized_operator(prob, v, MeasureKind::volume_over_2rho);
  const SparseCM A = L.active_block();
  const Eigen::VectorXd B = L.active_weight();
  const int n = static_cast<int>(A.rows());
  auto factor = [&](double s, Eigen::SimplicialLLT<SparseCM>& llt) {
    SparseCM S = A;
    for (int i = 0; i < n; ++i) S.coeffRef(i, i) -= s * B[i];
    llt.compute(S);
    return llt.info() == Eigen::Success;
  };
  double lo = detail::spectral_lower_bound(L, A, B);
  double sigma = lo - 1e-2 * std::max(1.0, std::abs(lo));
  auto llt = std::make_unique<Eigen::SimplicialLLT<SparseCM>>();
  if (!factor(sigma, *llt)) throw ConvergenceError("first_symmetric_eigenpair: factorization failed");

  Eigen::VectorXd x = L.gather(v.values()).cwiseAbs();
  x.array() += 1e-3 * x.maxCoeff() + 1e-12;
  x /= std::sqrt(detail::b_dot(x, B, x));
  SymmetricEigenpair out;
  double mu = 0.0, rn = 0.0;
  std::vector<double> hist;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd y = llt->solve((B.array() * x.array()).matrix());
    x = y / std::sqrt(detail::b_dot(y, B, y));
    mu = x.dot(A * x);
    const Eigen::VectorXd r = A * x - mu * (B.array() * x.array()).matrix();
    rn = std::sqrt((r.array().square() / B.array()).sum());
    hist.push_back(rn);
    out.iterations = it + 1;
    if (rn <= tol * std::max(1.0, std::abs(mu))) break;
    if (it % 3 == 2) {
      // Move the shift up toward mu while keeping A - sigma B definite.
      double delta = std::max(2.0 * rn, 1e-4 * std::max(1.0, std::abs(mu)));
      for (int attempt = 0; attempt < 30; ++attempt) {
        const double trial = mu - delta;
        if (trial <= sigma) break;
        auto cand = std::make_unique<Eigen::SimplicialLLT<SparseCM>>();
        if (factor(trial, *cand)) {
          sigma = trial;
          llt = std::move(cand);
          break;
        }
        delta *= 4.0;
      }
    }
  }
  if (rn > tol * std::max(1.0, std::abs(mu)))
    throw ConvergenceError("first_symmetric_eigenpair: inverse iteration did not converge", {}, hist);
  Eigen::VectorXd full = L.scatter(x);
  if (full.sum() < 0) full = -full;
  Field g(prob.grid(), full);
  const auto up = lift_field(g);
  const double n2 = weighted_inner_product(up, up, MeasureKind::upstairs_volume);
  g.values() /= std::sqrt(n2);
  out.mu1 = mu;
  out.g1 = std::move(g);
  out.residual = rn;
  return out;
}

/// Eigenvalue of -Delta on S^(m-1) for degree-k harmonics.
inline double nu_k(int k, int m) {
  if (k < 1) throw DomainError("nu_k: k must be >= 1");
  if (m < 2) throw DomainError("nu_k: m must be >= 2");
  return static_cast<double>(k) * (k + m - 2);
}

struct PhiKReport {
  int k = 1;
  double nu_k = 0.0;
  double Q_value = 0.0;
  double Q0 = 0.0;
  double Q_ang = 0.0;
  /// Same form summed with nu_k inside the integrand (independent of the split).
  double Q_direct = 0.0;
  /// int_A |Phi^k|^2 and int_A g1^2.
  double phi_norm2 = 0.0;
  double g_norm2 = 0.0;
};

/// Bicubic (Catmull-Rom) interpolation on a uniform reduced grid; odd
/// reflection across the Dirichlet rows, even across the poles.
class GridInterpolator {
 public:
  struct Sample {
    double f = 0.0;
    double d_rho = 0.0;
    double d_phi = 0.0;
  };

  explicit GridInterpolator(const Field& f) : f_(f) {
    const Grid& g = f.grid();
    if (g.kind() != GridKind::reduced) throw ShapeError("GridInterpolator: reduced grid expected");
    r0_ = g.inner_radius();
    hr_ = (g.outer_radius() - g.inner_radius()) / (g.n_radial() - 1);
    ha_ = std::numbers::pi / (g.n_angular() - 1);
  }

  double operator()(double rho, double phi) const { return eval(rho, phi, false).f; }

  Sample eval(double rho, double phi, bool derivatives = true) const {
    const Grid& g = f_.grid();
    const int nr = g.n_radial(), na = g.n_angular();
    const double xr = (rho - r0_) / hr_, xa = phi / ha_;
    const int i = std::clamp(static_cast<int>(std::floor(xr)), 0, nr - 2);
    const int j = std::clamp(static_cast<int>(std::floor(xa)), 0, na - 2);
    const auto wr = weights(xr - i), wa = weights(xa - j);
    std::array<double, 4> dwr{}, dwa{};
    if (derivatives) {
      dwr = dweights(xr - i);
      dwa = dweights(xa - j);
    }
    Sample out;
    for (int a = 0; a < 4; ++a) {
      double row = 0.0, drow = 0.0;
      for (int b = 0; b < 4; ++b) {
        const double v = at(i - 1 + a, j - 1 + b);
        row += wa[b] * v;
        if (derivatives) drow += dwa[b] * v;
      }
      out.f += wr[a] * row;
      if (derivatives) {
        out.d_rho += dwr[a] * row;
        out.d_phi += wr[a] * drow;
      }
    }
    out.d_rho /= hr_;
    out.d_phi /= ha_;
    return out;
  }

 private:
  static std::array<double, 4> weights(double t) {
    const double t2 = t * t, t3 = t2 * t;
    return {0.5 * (-t3 + 2 * t2 - t), 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (-3 * t3 + 4 * t2 + t), 0.5 * (t3 - t2)};
  }
  static std::array<double, 4> dweights(double t) {
    const double t2 = t * t;
    return {0.5 * (-3 * t2 + 4 * t - 1), 0.5 * (9 * t2 - 10 * t), 0.5 * (-9 * t2 + 8 * t + 1), 0.5 * (3 * t2 - 2 * t)};
  }
  double at(int i, int j) const {
    const Grid& g = f_.grid();
    const int nr = g.n_radial(), na = g.n_angular();
    if (j < 0) j = -j;
    if (j >= na) j = 2 * (na - 1) - j;
    if (i < 0) return -f_(-i, j);
    if (i >= nr) return -f_(2 * (nr - 1) - i, j);
    return f_(i, j);
  }

  Field f_;
  double r0_ = 0, hr_ = 1, ha_ = 1;
};

/// Q_{u}(Phi^k) for Phi^k = g1 (cos^2 t psi_k(s1) + sin^2 t psi_k(s2)), with psi_k
/// of mean square one on S^(m-1), reduced to a 2D integral over (r, theta).
/// The integrand is built from the bicubic interpolants of g1 and v and
/// integrated with 4x4 Gauss points per grid cell.
inline PhiKReport quadratic_form_phi_k(const Field& g1, const Field& v, const ProblemParams& params, int k) {
  g1.require_same_grid(v, "quadratic_form_phi_k");
  if (g1.grid().kind() != GridKind::reduced) throw ShapeError("quadratic_form_phi_k: expected reduced-grid fields");
  if (g1.grid().half_dimension() != params.m) throw ShapeError("quadratic_form_phi_k: grid does not match m");
  const Grid& D = g1.grid();
  const GridInterpolator gi(g1), ui(v);
  const double nu = nu_k(k, params.m);
  const double S = std::pow(sphere_area(params.m - 1), 2);
  static constexpr std::array<double, 4> gx = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                                               0.8611363115940526};
  static constexpr std::array<double, 4> gw = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                                               0.3478548451374538};
  PhiKReport rep;
  rep.k = k;
  rep.nu_k = nu;
  const auto& rn = D.radial_nodes();
  const auto& an = D.angular_nodes();
  for (int i = 0; i + 1 < D.n_radial(); ++i) {
    for (int j = 0; j + 1 < D.n_angular(); ++j) {
      const double r_lo = rn[i], r_hi = rn[i + 1], a_lo = an[j], a_hi = an[j + 1];
      const double jr = 0.5 * (r_hi - r_lo), ja = 0.5 * (a_hi - a_lo);
      for (int qa = 0; qa < 4; ++qa) {
        const double rho = r_lo + jr * (gx[qa] + 1.0);
        const double r = std::sqrt(2.0 * rho);
        for (int qb = 0; qb < 4; ++qb) {
          const double phi = a_lo + ja * (gx[qb] + 1.0);
          const double t = 0.5 * phi, c = std::cos(t), s = std::sin(t);
          // dx = S r^(2m-1) (cs)^(m-1) dr dtheta, dr dtheta = drho dphi / (2r)
          const double w = S * std::pow(r, 2 * params.m - 1) * std::pow(c * s, params.m - 1) / (2.0 * r) *
                           gw[qa] * gw[qb] * jr * ja;
          const auto G = gi.eval(rho, phi);
          const double u = ui.eval(rho, phi, false).f;
          const double gv = G.f, dr = G.d_rho * r, dt = 2.0 * G.d_phi;
          const double c2 = c * c, s2 = s * s, s2t = std::sin(2.0 * t), q4 = c2 * c2 + s2 * s2;
          const double V = params.lambda - params.p * std::pow(std::abs(u), params.p - 1.0);
          const double a1 = dt * c2 - gv * s2t, a2 = dt * s2 + gv * s2t;
          const double base = dr * dr * q4 + (a1 * a1 + a2 * a2) / (r * r) + V * gv * gv * q4;
          const double ang = gv * gv / (r * r);
          rep.Q0 += w * base;
          rep.Q_ang += w * ang;
          rep.Q_direct += w * (base + nu * gv * gv * (c2 + s2) / (r * r));
          rep.phi_norm2 += w * gv * gv * q4;
          rep.g_norm2 += w * gv * gv;
        }
      }
    }
  }
  rep.Q_value = rep.Q0 + nu * rep.Q_ang;
  return rep;
}

/// #{k : Q(Phi^k) < 0}. Only the Phi^k directions are counted.
inline int morse_lower_bound_upstairs(const std::vector<PhiKReport>& reports) {
  return static_cast<int>(
      std::count_if(reports.begin(), reports.end(), [](const PhiKReport& r) { return r.Q_value < 0.0; }));
}

/// Largest deviation of the independently summed Q(Phi^k) from the line
/// through the first and last reports in the (nu_k, Q) plane, relative to max |Q|.
inline double phi_k_collinearity(const std::vector<PhiKReport>& reports) {
  if (reports.size() < 3) throw ContractError("phi_k_collinearity: need at least three reports");
  const auto& a = reports.front();
  const auto& b = reports.back();
  if (b.nu_k == a.nu_k) throw ContractError("phi_k_collinearity: reports must span distinct nu_k");
  const double slope = (b.Q_direct - a.Q_direct) / (b.nu_k - a.nu_k);
  double dev = 0.0, scale = 0.0;
  for (const auto& r : reports) {
    dev = std::max(dev, std::abs(r.Q_direct - (a.Q_direct + slope * (r.nu_k - a.nu_k))));
    scale = std::max(scale, std::abs(r.Q_direct));
  }
  return scale > 0.0 ? dev / scale : dev;
}

// ---------------------------------------------------------------------------
// Monte-Carlo evaluation of <L Phi, Phi> directly in R^4.

struct MonteCarloEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Importance-sampled estimate of int_A |grad Phi^k|^2 + (lambda - p|u|^(p-1)) Phi^2
/// over A in R^4 (m = 2), with Phi evaluated pointwise in Cartesian coordinates
/// and its gradient by central differences.
inline MonteCarloEstimate monte_carlo_phi_k(const Field& g1, const Field& v, const ProblemParams& params, int k,
                                            std::size_t samples, std::uint64_t seed) {
  if (params.m != 2) throw ParameterError("monte_carlo_phi_k: only m = 2 (A in R^4)");
  g1.require_same_grid(v, "monte_carlo_phi_k");
  const Grid& D = g1.grid();
  const GridInterpolator gi(g1), ui(v);
  const auto up_grid = lift_grid(g1.grid_ptr());
  const auto mu = nodal_measure(*up_grid, MeasureKind::upstairs_volume);

  // Defensive mixture: mostly proportional to the g1^2 mass of each cell.
  std::vector<double> pg(D.size()), pv(D.size()), pc(D.size());
  double sg = 0, sv = 0;
  for (int id = 0; id < D.size(); ++id) {
    pg[id] = g1.values()[id] * g1.values()[id] * mu[id];
    pv[id] = mu[id];
    sg += pg[id];
    sv += pv[id];
  }
  for (int id = 0; id < D.size(); ++id) pc[id] = 0.9 * pg[id] / sg + 0.1 * pv[id] / sv;
  std::discrete_distribution<int> pick(pc.begin(), pc.end());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;

  auto phi_at = [&](const std::array<double, 4>& x) {
    const double n1 = std::hypot(x[0], x[1]), n2 = std::hypot(x[2], x[3]);
    const double r2 = n1 * n1 + n2 * n2;
    const double theta = std::atan2(n2, n1);
    const double a1 = std::atan2(x[1], x[0]), a2 = std::atan2(x[3], x[2]);
    const double psi1 = std::sqrt(2.0) * std::cos(k * a1), psi2 = std::sqrt(2.0) * std::cos(k * a2);
    const double gv = gi(0.5 * r2, 2.0 * theta);
    return gv * ((n1 * n1 / r2) * psi1 + (n2 * n2 / r2) * psi2);
  };

  double mean = 0.0, m2 = 0.0;
  const auto& er = D.radial_edges();
  const auto& ea = D.angular_edges();
  for (std::size_t sidx = 0; sidx < samples; ++sidx) {
    const int id = pick(rng);
    const int i = id / D.n_angular(), j = id % D.n_angular();
    const double rho = er[i] + (er[i + 1] - er[i]) * U(rng);
    const double phi = ea[j] + (ea[j + 1] - ea[j]) * U(rng);
    const double a1 = two_pi * U(rng), a2 = two_pi * U(rng);
    const double r = std::sqrt(2.0 * rho), th = 0.5 * phi, c = std::cos(th), s = std::sin(th);
    const std::array<double, 4> x = {r * c * std::cos(a1), r * c * std::sin(a1), r * s * std::cos(a2),
                                     r * s * std::sin(a2)};
    const double pdf = pc[id] / ((er[i + 1] - er[i]) * (ea[j + 1] - ea[j])) * 2.0 * r /
                       (two_pi * two_pi * r * r * r * c * s);
    const double eps = 1e-5;
    double grad2 = 0.0;
    for (int d = 0; d < 4; ++d) {
      auto xp = x, xm = x;
      xp[d] += eps;
      xm[d] -= eps;
      const double gd = (phi_at(xp) - phi_at(xm)) / (2 * eps);
      grad2 += gd * gd;
    }
    const double ph = phi_at(x);
    const double V = params.lambda - params.p * std::pow(std::abs(ui(rho, phi)), params.p - 1.0);
    const double val = (grad2 + V * ph * ph) / pdf;
    const double delta = val - mean;
    mean += delta / static_cast<double>(sidx + 1);
    m2 += delta * (val - mean);
  }
  MonteCarloEstimate out;
  out.value = mean;
  out.samples = samples;
  out.std_error = samples > 1 ? std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples)) : 0.0;
  return out;
}

}  // namespace annred
