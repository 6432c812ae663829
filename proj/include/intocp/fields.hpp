#pragma once

#include <functional>

#include <Eigen/Dense>

#include "intocp/errors.hpp"
#include "intocp/quadrature.hpp"

namespace intocp {

/// Grid-sampled values, one column per node. The tag keeps states,
/// costates and controls from being mixed up.
template <typename Tag>
class NodeArray {
 public:
  NodeArray() = default;
  NodeArray(int dim, int nodes) : v_(Eigen::MatrixXd::Zero(dim, nodes)) {}
  explicit NodeArray(Eigen::MatrixXd values) : v_(std::move(values)) {}

  static NodeArray constant(const Eigen::VectorXd& c, int nodes) {
    return NodeArray(c.replicate(1, nodes));
  }
  static NodeArray constant(double c, int dim, int nodes) {
    return NodeArray(Eigen::MatrixXd::Constant(dim, nodes, c));
  }
  static NodeArray sample(const Grid& g, int dim,
                          const std::function<Eigen::VectorXd(const Point&)>& f) {
    NodeArray a(dim, g.size());
    for (int i = 0; i < g.size(); ++i) {
      Eigen::VectorXd v = f(g.node(i));
      if (v.size() != dim) throw ShapeError("sample: wrong value dimension");
      a.v_.col(i) = v;
    }
    return a;
  }

  int dim() const { return static_cast<int>(v_.rows()); }
  int nodes() const { return static_cast<int>(v_.cols()); }
  const Eigen::MatrixXd& values() const { return v_; }
  Eigen::MatrixXd& values() { return v_; }
  auto at(int i) const { return v_.col(i); }
  auto at(int i) { return v_.col(i); }

  double sup_norm() const { return v_.size() ? v_.cwiseAbs().maxCoeff() : 0.0; }

  NodeArray& operator+=(const NodeArray& o) {
    check(o);
    v_ += o.v_;
    return *this;
  }
  NodeArray& operator-=(const NodeArray& o) {
    check(o);
    v_ -= o.v_;
    return *this;
  }
  NodeArray& operator*=(double s) {
    v_ *= s;
    return *this;
  }
  friend NodeArray operator+(NodeArray a, const NodeArray& b) { return a += b; }
  friend NodeArray operator-(NodeArray a, const NodeArray& b) { return a -= b; }
  friend NodeArray operator*(double s, NodeArray a) { return a *= s; }

 private:
  void check(const NodeArray& o) const {
    if (o.v_.rows() != v_.rows() || o.v_.cols() != v_.cols())
      throw ShapeError("node array shape mismatch");
  }

  Eigen::MatrixXd v_;
};

struct FieldTag {};
struct CoFieldTag {};
struct ControlTag {};
struct CoControlTag {};

/// State samples φ(x_i) or y(t_i), n per node.
using Field = NodeArray<FieldTag>;
/// Costate samples ψ, n per node; column i holds ψ(x_i)^T.
using CoField = NodeArray<CoFieldTag>;
/// Control samples, m per node.
using Control = NodeArray<ControlTag>;
/// Gradient samples ∇_u H, m per node; column i holds the row transposed.
using CoControl = NodeArray<CoControlTag>;

/// L² pairing Σ w_i g_i · δu_i.
inline double pair(const CoControl& g, const Control& du, const Grid& grid) {
  if (g.nodes() != grid.size() || du.nodes() != grid.size() || g.dim() != du.dim())
    throw ShapeError("pair: shape mismatch");
  return (g.values().cwiseProduct(du.values())).colwise().sum().transpose().dot(grid.weights());
}

}  // namespace intocp
