#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "annred/errors.hpp"
#include "annred/params.hpp"

namespace annred {

/// Which side of the reduction a grid parameterizes.
///  - reduced: (rho, phi) on D in R^N, phi the polar angle from the z_N axis.
///  - annulus: (r, theta) on A in R^{2m}, |y1| = r cos(theta), |y2| = r sin(theta).
enum class GridKind { reduced, annulus };

inline const char* to_string(GridKind kind) {
  return kind == GridKind::reduced ? "reduced" : "annulus";
}

/// Tensor-product grid in (radius, polar angle). Nodes include both radial
/// endpoints (Dirichlet) and both angular endpoints (poles). Each node owns the
/// dual cell bounded by consecutive entries of the edge arrays; the first and
/// last edges coincide with the end nodes.
class Grid {
 public:
  Grid(GridKind kind, int dimension, std::vector<double> radial, std::vector<double> angular,
       std::vector<double> radial_edges, std::vector<double> angular_edges,
       std::shared_ptr<const Grid> source = nullptr)
      : kind_(kind),
        dimension_(dimension),
        radial_(std::move(radial)),
        angular_(std::move(angular)),
        radial_edges_(std::move(radial_edges)),
        angular_edges_(std::move(angular_edges)),
        source_(std::move(source)) {
    check_axis(radial_, radial_edges_, "radial");
    check_axis(angular_, angular_edges_, "angular");
    if (radial_.front() <= 0.0) throw ParameterError("grid: radial nodes must be positive");
  }

  /// Uniform (rho, phi) grid on [R1, R2] x [0, pi].
  static std::shared_ptr<const Grid> reduced(const ReducedDomain& domain, int n_rho, int n_phi) {
    domain.validate();
    if (n_rho < 16 || n_phi < 16) throw ParameterError("grid: need at least 16 nodes per axis");
    auto uniform = [](double lo, double hi, int n) {
      std::vector<double> nodes(n);
      const double h = (hi - lo) / (n - 1);
      for (int i = 0; i < n; ++i) nodes[i] = lo + h * i;
      nodes.back() = hi;
      return nodes;
    };
    auto radial = uniform(domain.R1, domain.R2, n_rho);
    auto angular = uniform(0.0, std::numbers::pi, n_phi);
    return std::make_shared<const Grid>(GridKind::reduced, domain.N, radial, angular,
                                        midpoint_edges(radial), midpoint_edges(angular));
  }

  static std::shared_ptr<const Grid> reduced(const ProblemParams& params, int n_rho, int n_phi) {
    return reduced(ReducedDomain::from(params), n_rho, n_phi);
  }

  GridKind kind() const noexcept { return kind_; }
  /// N for a reduced grid, 2m for an annulus grid.
  int dimension() const noexcept { return dimension_; }
  /// m, the half-dimension of the upstairs space.
  int half_dimension() const noexcept {
    return kind_ == GridKind::reduced ? dimension_ - 1 : dimension_ / 2;
  }

  int n_radial() const noexcept { return static_cast<int>(radial_.size()); }
  int n_angular() const noexcept { return static_cast<int>(angular_.size()); }
  int size() const noexcept { return n_radial() * n_angular(); }
  int index(int i, int j) const noexcept { return i * n_angular() + j; }

  double radial(int i) const { return radial_[i]; }
  double angular(int j) const { return angular_[j]; }
  const std::vector<double>& radial_nodes() const noexcept { return radial_; }
  const std::vector<double>& angular_nodes() const noexcept { return angular_; }
  const std::vector<double>& radial_edges() const noexcept { return radial_edges_; }
  const std::vector<double>& angular_edges() const noexcept { return angular_edges_; }

  double inner_radius() const noexcept { return radial_.front(); }
  double outer_radius() const noexcept { return radial_.back(); }
  double angular_max() const noexcept { return angular_.back(); }

  /// Largest spacing along each axis.
  double radial_spacing() const { return max_gap(radial_); }
  double angular_spacing() const { return max_gap(angular_); }

  /// Radial endpoints carry Dirichlet data; every other node is an unknown.
  bool is_dirichlet(int i) const noexcept { return i == 0 || i == n_radial() - 1; }

  /// For an annulus grid produced by lifting: the reduced grid it came from.
  const std::shared_ptr<const Grid>& source() const noexcept { return source_; }

  bool same_as(const Grid& other) const noexcept {
    return this == &other ||
           (kind_ == other.kind_ && dimension_ == other.dimension_ && radial_ == other.radial_ &&
            angular_ == other.angular_);
  }

  static std::vector<double> midpoint_edges(const std::vector<double>& nodes) {
    std::vector<double> edges(nodes.size() + 1);
    edges.front() = nodes.front();
    edges.back() = nodes.back();
    for (std::size_t j = 1; j < nodes.size(); ++j) edges[j] = 0.5 * (nodes[j - 1] + nodes[j]);
    return edges;
  }

 private:
  static void check_axis(const std::vector<double>& nodes, const std::vector<double>& edges,
                         const char* name) {
    if (nodes.size() < 3) throw ParameterError(std::string("grid: too few ") + name + " nodes");
    if (edges.size() != nodes.size() + 1)
      throw ParameterError(std::string("grid: ") + name + " edges must have n+1 entries");
    for (std::size_t j = 1; j < nodes.size(); ++j) {
      if (!(nodes[j] > nodes[j - 1]))
        throw ParameterError(std::string("grid: ") + name + " nodes must increase strictly");
      if (!(edges[j] > nodes[j - 1] && edges[j] < nodes[j]))
        throw ParameterError(std::string("grid: ") + name + " edges must separate nodes");
    }
  }

  static double max_gap(const std::vector<double>& nodes) {
    double h = 0.0;
    for (std::size_t j = 1; j < nodes.size(); ++j) h = std::max(h, nodes[j] - nodes[j - 1]);
    return h;
  }

  GridKind kind_;
  int dimension_;
  std::vector<double> radial_;
  std::vector<double> angular_;
  std::vector<double> radial_edges_;
  std::vector<double> angular_edges_;
  std::shared_ptr<const Grid> source_;
};

using GridPtr = std::shared_ptr<const Grid>;

/// Real-valued nodal function on a grid, stored row-major (radial index outer).
class Field {
 public:
  Field() = default;
  explicit Field(GridPtr grid) : grid_(std::move(grid)) {
    if (!grid_) throw ShapeError("field: null grid");
    values_ = Eigen::VectorXd::Zero(grid_->size());
  }
  Field(GridPtr grid, Eigen::VectorXd values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (!grid_) throw ShapeError("field: null grid");
    if (values_.size() != grid_->size()) throw ShapeError("field: value count does not match grid");
  }

  /// Samples f(radius, angle) at every node.
  static Field sample(GridPtr grid, const std::function<double(double, double)>& f) {
    Field out(std::move(grid));
    const Grid& g = out.grid();
    for (int i = 0; i < g.n_radial(); ++i)
      for (int j = 0; j < g.n_angular(); ++j) out(i, j) = f(g.radial(i), g.angular(j));
    return out;
  }

  const Grid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const noexcept { return grid_; }
  bool empty() const noexcept { return !grid_; }

  double operator()(int i, int j) const { return values_[grid_->index(i, j)]; }
  double& operator()(int i, int j) { return values_[grid_->index(i, j)]; }

  const Eigen::VectorXd& values() const noexcept { return values_; }
  Eigen::VectorXd& values() noexcept { return values_; }

  bool all_finite() const { return values_.allFinite(); }

  void require_same_grid(const Field& other, const char* where) const {
    if (!grid_ || !other.grid_ || !grid_->same_as(*other.grid_))
      throw ShapeError(std::string(where) + ": fields live on different grids");
  }

 private:
  GridPtr grid_;
  Eigen::VectorXd values_;
};

}  // namespace annred
