#pragma once

#include <array>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "intocp/errors.hpp"

namespace intocp {

using Point = Eigen::Vector2d;

enum class GridKind { interval, box };

/// Uniform composite-trapezoid grid on [0, T] or on a box in R^d, d <= 2.
///
/// Interval grids also provide the partial-range weights used for Volterra
/// integrals: partial_weight(i, j) integrates over [0, t_i].
class Grid {
 public:
  static Grid interval(double T, int N) {
    if (!(T > 0)) throw ShapeError("build_grid: T must be positive");
    if (N < 2) throw ShapeError("build_grid: N must be at least 2");
    Grid g;
    g.kind_ = GridKind::interval;
    g.dim_ = 1;
    g.counts_ = {N, 0};
    g.lo_ = {0.0, 0.0};
    g.hi_ = {T, 0.0};
    g.h_ = T / N;
    g.nodes_.resize(static_cast<std::size_t>(N + 1));
    g.weights_.resize(N + 1);
    for (int i = 0; i <= N; ++i) {
      g.nodes_[static_cast<std::size_t>(i)] = Point(i == N ? T : i * g.h_, 0.0);
      g.weights_(i) = (i == 0 || i == N) ? 0.5 * g.h_ : g.h_;
    }
    return g;
  }

  /// Box [a0,b0] (x [a1,b1]); node index is i0 * (N1 + 1) + i1.
  static Grid box(const std::vector<std::pair<double, double>>& bounds,
                  const std::vector<int>& N) {
    if (bounds.empty() || bounds.size() > 2 || bounds.size() != N.size())
      throw ShapeError("build_box_grid: need 1 or 2 axes with matching counts");
    Grid g;
    g.kind_ = GridKind::box;
    g.dim_ = static_cast<int>(bounds.size());
    std::array<std::vector<double>, 2> ax, aw;
    for (int a = 0; a < 2; ++a) {
      if (a < g.dim_) {
        auto [lo, hi] = bounds[static_cast<std::size_t>(a)];
        int n = N[static_cast<std::size_t>(a)];
        if (!(hi > lo)) throw ShapeError("build_box_grid: empty axis extent");
        if (n < 1) throw ShapeError("build_box_grid: N must be at least 1");
        g.lo_[static_cast<std::size_t>(a)] = lo;
        g.hi_[static_cast<std::size_t>(a)] = hi;
        g.counts_[static_cast<std::size_t>(a)] = n;
        double h = (hi - lo) / n;
        for (int i = 0; i <= n; ++i) {
          ax[static_cast<std::size_t>(a)].push_back(i == n ? hi : lo + i * h);
          aw[static_cast<std::size_t>(a)].push_back((i == 0 || i == n) ? 0.5 * h : h);
        }
      } else {
        ax[static_cast<std::size_t>(a)] = {0.0};
        aw[static_cast<std::size_t>(a)] = {1.0};
      }
    }
    g.h_ = (g.hi_[0] - g.lo_[0]) / g.counts_[0];
    const std::size_t n0 = ax[0].size(), n1 = ax[1].size();
    g.nodes_.reserve(n0 * n1);
    g.weights_.resize(static_cast<Eigen::Index>(n0 * n1));
    for (std::size_t i = 0; i < n0; ++i)
      for (std::size_t j = 0; j < n1; ++j) {
        g.weights_(static_cast<Eigen::Index>(g.nodes_.size())) = aw[0][i] * aw[1][j];
        g.nodes_.emplace_back(ax[0][i], ax[1][j]);
      }
    return g;
  }

  GridKind kind() const { return kind_; }
  int dim() const { return dim_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  /// Subdivisions along axis `a`.
  int subdivisions(int a = 0) const { return counts_[static_cast<std::size_t>(a)]; }
  const Point& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const std::vector<Point>& nodes() const { return nodes_; }
  double weight(int i) const { return weights_(i); }
  const Eigen::VectorXd& weights() const { return weights_; }
  /// Lebesgue measure of the domain.
  double measure() const {
    double m = 1.0;
    for (int a = 0; a < dim_; ++a)
      m *= hi_[static_cast<std::size_t>(a)] - lo_[static_cast<std::size_t>(a)];
    return m;
  }
  std::pair<double, double> bounds(int a) const {
    return {lo_[static_cast<std::size_t>(a)], hi_[static_cast<std::size_t>(a)]};
  }
  /// Final time of an interval grid.
  double horizon() const { return hi_[0]; }
  double step() const { return h_; }
  int last() const { return size() - 1; }

  /// Weight of node j in the trapezoid rule over [0, t_i]; zero for j > i.
  double partial_weight(int i, int j) const {
    require_interval();
    if (i <= 0 || j > i || j < 0) return 0.0;
    return (j == 0 || j == i) ? 0.5 * h_ : h_;
  }

  /// Weight of node i in the discrete adjoint of the partial rule, i.e. the
  /// rule that integrates over [t_l, T] in costate and Hamiltonian terms.
  /// Equals w_i * partial_weight(i, l) / w_l for i >= l, else zero.
  double tail_weight(int l, int i) const {
    if (i < l) return 0.0;
    return weights_(i) * partial_weight(i, l) / weights_(l);
  }

  /// Two-point analogue of tail_weight for the integral over
  /// [max(t_j, t_k), T].
  double tail_weight2(int j, int k, int i) const {
    if (i < j || i < k) return 0.0;
    return weights_(i) * partial_weight(i, j) * partial_weight(i, k) /
           (weights_(j) * weights_(k));
  }

 private:
  Grid() = default;

  void require_interval() const {
    if (kind_ != GridKind::interval)
      throw ShapeError("partial-range weights need an interval grid");
  }

  GridKind kind_ = GridKind::interval;
  int dim_ = 1;
  std::array<int, 2> counts_{0, 0};
  std::array<double, 2> lo_{0, 0}, hi_{0, 0};
  double h_ = 0;
  std::vector<Point> nodes_;
  Eigen::VectorXd weights_;
};

/// Σ w_i v_i. A column vector holds scalar samples and yields a scalar;
/// a matrix holds vector samples, one node per column, and yields a vector.
template <typename Derived>
auto integrate(const Eigen::MatrixBase<Derived>& values, const Grid& g) {
  if constexpr (Derived::ColsAtCompileTime == 1) {
    if (values.size() != g.size()) throw ShapeError("integrate: sample count");
    return static_cast<double>(g.weights().dot(values));
  } else {
    if (values.cols() != g.size()) throw ShapeError("integrate: sample count");
    return Eigen::VectorXd(values * g.weights());
  }
}

/// Σ_ij w_i w_j v_ij for scalar samples on node pairs.
inline double integrate2(const Eigen::MatrixXd& values, const Grid& g) {
  if (values.rows() != g.size() || values.cols() != g.size())
    throw ShapeError("integrate2: sample count");
  return g.weights().dot(values * g.weights());
}

/// Σ_ij w_i w_j v_ij for vector samples, values[i * size + j].
inline Eigen::VectorXd integrate2(const std::vector<Eigen::VectorXd>& values,
                                  const Grid& g) {
  const auto n = static_cast<std::size_t>(g.size());
  if (values.size() != n * n) throw ShapeError("integrate2: sample count");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(values.empty() ? 0 : values[0].size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      acc += g.weight(static_cast<int>(i)) * g.weight(static_cast<int>(j)) *
             values[i * n + j];
  return acc;
}

/// Trapezoid rule over [0, t_upto] on an interval grid; sample layout as
/// in integrate().
template <typename Derived>
auto integrate_partial(const Eigen::MatrixBase<Derived>& values, const Grid& g,
                       int upto) {
  if (g.kind() != GridKind::interval)
    throw ShapeError("integrate_partial: interval grid required");
  const Eigen::Index count =
      Derived::ColsAtCompileTime == 1 ? values.size() : values.cols();
  if (count != g.size()) throw ShapeError("integrate_partial: sample count");
  if (upto < 0 || upto >= g.size())
    throw ShapeError("integrate_partial: node index out of range");
  if constexpr (Derived::ColsAtCompileTime == 1) {
    double acc = 0;
    for (int j = 0; j <= upto; ++j) acc += g.partial_weight(upto, j) * values(j);
    return acc;
  } else {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(values.rows());
    for (int j = 0; j <= upto; ++j) acc += g.partial_weight(upto, j) * values.col(j);
    return acc;
  }
}

}  // namespace intocp
