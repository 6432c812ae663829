#pragma once

#include <vector>

#include <Eigen/Dense>

#include "intocp/fields.hpp"
#include "intocp/kernel.hpp"
#include "intocp/problem.hpp"

namespace intocp {

/// Contributions to δ²J. `value` is their sum.
struct SecondVariationReport {
  double value = 0;
  /// ∫ of the pointwise Hessian of H.
  double pointwise = 0;
  /// ∫∫ of the cross Hessian of h2.
  double cross = 0;
  /// ∫∇uH·δ²u; zero for linear variations.
  double d2u_term = 0;
  /// ∇²F0 on δy(T); Volterra only.
  double terminal = 0;
};

namespace detail {

/// Index sets of (φ1, u1) (which = 0) or (φ2, u2) (which = 1) inside the
/// stacked arguments of a pair kernel.
inline std::vector<int> pair_slot_indices(int n, int m, int which) {
  std::vector<int> idx;
  for (int c = 0; c < n; ++c) idx.push_back(which * n + c);
  for (int c = 0; c < m; ++c) idx.push_back(2 * n + which * m + c);
  return idx;
}

inline Mat take(const Mat& H, const std::vector<int>& r, const std::vector<int>& c) {
  Mat out(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(c.size()));
  for (std::size_t a = 0; a < r.size(); ++a)
    for (std::size_t b = 0; b < c.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = H(r[a], c[b]);
  return out;
}

inline Mat take_cols(const Mat& J, const std::vector<int>& c) {
  Mat out(J.rows(), static_cast<Eigen::Index>(c.size()));
  for (std::size_t b = 0; b < c.size(); ++b) out.col(static_cast<Eigen::Index>(b)) = J.col(c[b]);
  return out;
}

inline Eigen::Map<const Vec> flat(const Mat& m) { return {m.data(), m.size()}; }

/// Σ w F1 + ½ ΣΣ w w F2 over the whole grid, with F2 as given.
inline double running_cost(const Problem& p, const Grid& g, const Field& phi, const Control& u) {
  const int N = g.size(), n = p.n, m = p.m;
  double J = 0;
  Vec a1(n + m), a2(2 * n + 2 * m);
  Points pt;
  if (!p.F1.is_zero())
    for (int i = 0; i < N; ++i) {
      pt[0] = g.node(i);
      a1 << phi.at(i), u.at(i);
      J += g.weight(i) * p.F1.scalar_value(pt, a1);
    }
  if (!p.F2_original.is_zero())
    for (int i = 0; i < N; ++i) {
      pt[0] = g.node(i);
      a2.segment(0, n) = phi.at(i);
      a2.segment(2 * n, m) = u.at(i);
      for (int k = 0; k < N; ++k) {
        pt[1] = g.node(k);
        a2.segment(n, n) = phi.at(k);
        a2.segment(2 * n + m, m) = u.at(k);
        J += 0.5 * g.weight(i) * g.weight(k) * p.F2_original.scalar_value(pt, a2);
      }
    }
  return J;
}

/// Per-node ∇F1 + Σ_k w_k ∇_{(φ1,u1)} F̃2, as an (n+m) x N matrix.
inline Mat cost_gradients(const Problem& p, const Grid& g, const Field& phi, const Control& u) {
  const int N = g.size(), n = p.n, m = p.m;
  Mat G = Mat::Zero(n + m, N);
  Vec a1(n + m), a2(2 * n + 2 * m);
  const auto i1 = pair_slot_indices(n, m, 0);
  Points pt;
  for (int l = 0; l < N; ++l) {
    pt[0] = g.node(l);
    if (!p.F1.is_zero()) {
      a1 << phi.at(l), u.at(l);
      G.col(l) += p.F1.jacobian(pt, a1).row(0).transpose();
    }
    if (p.F2.is_zero()) continue;
    a2.segment(0, n) = phi.at(l);
    a2.segment(2 * n, m) = u.at(l);
    for (int k = 0; k < N; ++k) {
      pt[1] = g.node(k);
      a2.segment(n, n) = phi.at(k);
      a2.segment(2 * n + m, m) = u.at(k);
      G.col(l) += g.weight(k) * take_cols(p.F2.jacobian(pt, a2), i1).row(0).transpose();
    }
  }
  return G;
}

/// Adds the cost parts of the pointwise Hessians D[l] (∇²F1 + Σ_k w_k ∇²_11 F̃2)
/// and of the cross blocks X(l,k) (∇²_12 F̃2), in (φ, u) order.
inline void add_cost_hessians(const Problem& p, const Grid& g, const Mat& phi, const Mat& u,
                              std::vector<Mat>& D, Mat& X) {
  const int N = g.size(), n = p.n, m = p.m, q = n + m;
  const auto i1 = pair_slot_indices(n, m, 0);
  const auto i2 = pair_slot_indices(n, m, 1);
  Vec a1(q), a2(2 * q);
  Points pt;
  const CoVec one = CoVec::Ones(1);
  for (int l = 0; l < N; ++l) {
    Mat& Dl = D[static_cast<std::size_t>(l)];
    pt[0] = g.node(l);
    a1 << phi.col(l), u.col(l);
    if (!p.F1.is_zero()) Dl += p.F1.hessian_contracted(pt, a1, one);
    if (p.F2.is_zero()) continue;
    a2.segment(0, n) = phi.col(l);
    a2.segment(2 * n, m) = u.col(l);
    for (int k = 0; k < N; ++k) {
      pt[1] = g.node(k);
      a2.segment(n, n) = phi.col(k);
      a2.segment(2 * n + m, m) = u.col(k);
      Mat H = p.F2.hessian_contracted(pt, a2, one);
      Dl += g.weight(k) * take(H, i1, i1);
      X.block(l * q, k * q, q, q) += take(H, i1, i2);
    }
  }
}

}  // namespace detail

}  // namespace intocp
