#pragma once

// Helpers shared by the unit tests and the acceptance runner. Everything
// here is written against plain Eigen so it stays independent of the
// library code it checks.

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "intocp/fields.hpp"
#include "intocp/quadform.hpp"
#include "intocp/quadrature.hpp"

namespace oracle {

using intocp::Control;
using intocp::Grid;
using intocp::Mat;
using intocp::Vec;

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

/// Smooth random direction: a few low Fourier modes per component.
inline Control random_direction(const Grid& g, int m, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Control d(m, g.size());
  for (int c = 0; c < m; ++c) {
    double a[4], b[4];
    for (int k = 0; k < 4; ++k) {
      a[k] = nd(rng) / (1 + k);
      b[k] = nd(rng) / (1 + k);
    }
    for (int i = 0; i < g.size(); ++i) {
      const auto& x = g.node(i);
      const double s = (x(0) + 0.5 * x(1)) / std::max(1.0, g.horizon());
      double v = 0;
      for (int k = 0; k < 4; ++k) v += a[k] * std::cos(M_PI * k * s) + b[k] * std::sin(M_PI * (k + 1) * s);
      d.at(i)(c) = v;
    }
  }
  return d;
}

/// Unit-variance i.i.d. direction, for probing quadratic forms.
inline Control white_direction(const Grid& g, int m, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Control d(m, g.size());
  for (int i = 0; i < g.size(); ++i)
    for (int c = 0; c < m; ++c) d.at(i)(c) = nd(rng);
  return d;
}

inline Eigen::Map<const Vec> flat(const Mat& m) { return {m.data(), m.size()}; }

/// Fredholm accessory cost evaluated by quadrature after solving the
/// linear state equation Φ_i = Σ_l w_l [A(i,l)Φ_l + B(i,l)U_l] directly.
inline double fredholm_accessory_direct(const intocp::BlockKernel& A, const intocp::BlockKernel& B,
                                        const std::vector<Mat>& P1, const std::vector<Mat>& Q1,
                                        const std::vector<Mat>& R1, const intocp::BlockKernel& P2,
                                        const intocp::BlockKernel& Q2, const intocp::BlockKernel& R2,
                                        const Grid& g, const Control& U) {
  const int N = g.size(), n = A.rows();
  Mat Sys = Mat::Identity(N * n, N * n);
  Vec rhs = Vec::Zero(N * n);
  for (int i = 0; i < N; ++i)
    for (int l = 0; l < N; ++l) {
      Sys.block(i * n, l * n, n, n) -= g.weight(l) * A.block(i, l);
      rhs.segment(i * n, n) += g.weight(l) * B.block(i, l) * U.at(l);
    }
  Vec Phi = Sys.fullPivLu().solve(rhs);
  auto phi = [&](int i) { return Phi.segment(i * n, n); };
  double J = 0;
  for (int l = 0; l < N; ++l) {
    const auto s = static_cast<std::size_t>(l);
    J += g.weight(l) * (phi(l).dot(P1[s] * phi(l)) + 2 * phi(l).dot(Q1[s] * U.at(l)) +
                        U.at(l).dot(R1[s] * U.at(l)));
  }
  for (int l = 0; l < N; ++l)
    for (int k = 0; k < N; ++k)
      J += g.weight(l) * g.weight(k) *
           (phi(l).dot(P2.block(l, k) * phi(k)) + 2 * phi(l).dot(Q2.block(l, k) * U.at(k)) +
            U.at(l).dot(R2.block(l, k) * U.at(k)));
  return J;
}

/// Volterra accessory cost: solves the causal linear state equation
/// δy_i = Σ_{l≤i} w^{(i)}_l [A1(i,l)δy_l + B1(i,l)U_l] as one dense system,
/// then evaluates ½[δy_Nᵀ P0 δy_N + Σ w(...) + ΣΣ w w(...)] by quadrature.
inline double volterra_accessory_direct(const intocp::BlockKernel& A1, const intocp::BlockKernel& B1,
                                        const Mat& P0, const std::vector<Mat>& P1,
                                        const std::vector<Mat>& Q1, const std::vector<Mat>& R1,
                                        const intocp::BlockKernel& P2, const intocp::BlockKernel& Q2,
                                        const intocp::BlockKernel& R2, const Grid& g, const Control& U) {
  const int N = g.size(), n = A1.rows();
  Mat Sys = Mat::Identity(N * n, N * n);
  Vec rhs = Vec::Zero(N * n);
  for (int i = 0; i < N; ++i)
    for (int l = 0; l <= i; ++l) {
      const double w = g.partial_weight(i, l);
      Sys.block(i * n, l * n, n, n) -= w * A1.block(i, l);
      rhs.segment(i * n, n) += w * B1.block(i, l) * U.at(l);
    }
  Vec Y = Sys.fullPivLu().solve(rhs);
  auto y = [&](int i) { return Y.segment(i * n, n); };
  double J = y(N - 1).dot(P0 * y(N - 1));
  for (int l = 0; l < N; ++l) {
    const auto s = static_cast<std::size_t>(l);
    J += g.weight(l) * (y(l).dot(P1[s] * y(l)) + 2 * y(l).dot(Q1[s] * U.at(l)) +
                        U.at(l).dot(R1[s] * U.at(l)));
  }
  for (int l = 0; l < N; ++l)
    for (int k = 0; k < N; ++k)
      J += g.weight(l) * g.weight(k) *
           (y(l).dot(P2.block(l, k) * y(k)) + 2 * y(l).dot(Q2.block(l, k) * U.at(k)) +
            U.at(l).dot(R2.block(l, k) * U.at(k)));
  return 0.5 * J;
}

}  // namespace oracle
