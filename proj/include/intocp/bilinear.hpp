#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "intocp/errors.hpp"
#include "intocp/fields.hpp"
#include "intocp/multiarray.hpp"
#include "intocp/presets.hpp"
#include "intocp/problem.hpp"
#include "intocp/quadform.hpp"
#include "intocp/volterra.hpp"

namespace intocp::bilinear_control {

using ForcingFn = std::function<Vec(double)>;
using NodeFn = std::function<Mat(double)>;
using KernelFn = std::function<Mat(double, double)>;
using TriKernelFn = std::function<Tri3(double, double)>;
using TriKernel3Fn = std::function<Tri3(double, double, double)>;

/// y(t) = y0(t) + ∫_0^t [A y + B u + C(y ⊗ u)] ds
/// J = ∫ ½yᵀPy + yᵀQu + ½uᵀRu dt
///
/// C(t,s) has dims {n, m, n}: entry (j, k, i) multiplies y_j u_k in
/// component i. Empty functions are zero.
struct BilinearProblem1 {
  int n = 1;
  int m = 1;
  ForcingFn y0;
  KernelFn A, B;
  TriKernelFn C;
  NodeFn P, Q, R;
};

/// Adds ∫_0^t ∫_0^t D(t,s,σ)(y(s) ⊗ u(σ)) dσ ds to the state and
/// ∫∫ ½yᵀ(t)P2y(τ) + yᵀ(t)Q2u(τ) + ½uᵀ(t)R2u(τ) dτ dt to the cost.
struct BilinearProblem2 {
  int n = 1;
  int m = 1;
  ForcingFn y0;
  KernelFn A, B;
  TriKernelFn C;
  TriKernel3Fn D;
  NodeFn P1, Q1, R1;
  KernelFn P2, Q2, R2;
};

struct NcOptions {
  /// Stop when the control changes by at most this much in a sweep.
  double tol = 1e-12;
  double relaxation = 1.0;
  int max_sweeps = 300;
  int max_inner = 200;
  volterra::SolverOptions state;
};

/// A solution of the necessary conditions with its residuals.
struct Triple {
  Field state;
  Control control;
  CoField costate;
  double cost = 0;
  double state_residual = 0;
  double costate_residual = 0;
  double stationarity_residual = 0;
  int sweeps = 0;
  /// Control change per sweep.
  std::vector<double> history;
};

namespace detail {

inline Mat at(const NodeFn& f, double t, int r, int c) {
  if (!f) return Mat::Zero(r, c);
  Mat M = f(t);
  if (M.rows() != r || M.cols() != c) throw ShapeError("bilinear: cost block has the wrong shape");
  return M;
}

inline Mat at(const KernelFn& f, double t, double s, int r, int c) {
  if (!f) return Mat::Zero(r, c);
  Mat M = f(t, s);
  if (M.rows() != r || M.cols() != c) throw ShapeError("bilinear: kernel has the wrong shape");
  return M;
}

inline Tri3 check_tri(Tri3 T, int n, int m) {
  if (T.dim(0) != n || T.dim(1) != m || T.dim(2) != n)
    throw ShapeError("bilinear: tridimensional kernel must have dims {n, m, n}");
  return T;
}

inline std::optional<Tri3> at(const TriKernelFn& f, double t, double s, int n, int m) {
  if (!f) return std::nullopt;
  return check_tri(f(t, s), n, m);
}

inline std::optional<Tri3> at(const TriKernel3Fn& f, double t, double s, double sg, int n, int m) {
  if (!f) return std::nullopt;
  return check_tri(f(t, s, sg), n, m);
}

inline Mat sym(const Mat& M) { return 0.5 * (M + M.transpose()); }

}  // namespace detail

/// (ψC)_{jk} = Σ_i ψ_i C(j, k, i), an n x m matrix.
inline Mat contract_output(const Tri3& C, const CoVec& psi) {
  if (psi.size() != C.dim(2)) throw ShapeError("contract_output: covector dimension");
  Mat r = Mat::Zero(C.dim(0), C.dim(1));
  for (Eigen::Index j = 0; j < C.dim(0); ++j)
    for (Eigen::Index k = 0; k < C.dim(1); ++k)
      for (Eigen::Index i = 0; i < C.dim(2); ++i) r(j, k) += psi(i) * C(j, k, i);
  return r;
}

inline BilinearProblem2 lift(const BilinearProblem1& b) {
  BilinearProblem2 r;
  r.n = b.n;
  r.m = b.m;
  r.y0 = b.y0;
  r.A = b.A;
  r.B = b.B;
  r.C = b.C;
  r.P1 = b.P;
  r.Q1 = b.Q;
  r.R1 = b.R;
  return r;
}

/// The same problem in the generic Volterra model, with exact derivatives.
/// f2 carries 2D(y1 ⊗ u2) and F2 carries y1P2y2 + 2y1Q2u2 + u1R2u2, so the
/// generic ½∫∫ reproduces the bilinear data.
inline Problem to_problem(const BilinearProblem2& b) {
  if (b.n < 1 || b.m < 1) throw ShapeError("bilinear: need n >= 1 and m >= 1");
  const int n = b.n, m = b.m;
  ProblemDef d;
  d.family = Family::volterra;
  d.n = n;
  d.m = m;
  if (b.y0) d.forcing = [f = b.y0](const Point& x) { return f(x(0)); };
  if (b.A || b.B || b.C) {
    auto A = b.A, B = b.B;
    auto C = b.C;
    d.f1 = Kernel(
        n, {n, m},
        [=](const Points& p, const Vec& a) {
          const double t = p[0](0), s = p[1](0);
          Vec y = a.head(n), u = a.tail(m);
          Vec v = detail::at(A, t, s, n, n) * y + detail::at(B, t, s, n, m) * u;
          if (auto c = detail::at(C, t, s, n, m)) v += bilinear(*c, y, u);
          return v;
        },
        [=](const Points& p, const Vec& a) {
          const double t = p[0](0), s = p[1](0);
          Vec y = a.head(n), u = a.tail(m);
          Mat J(n, n + m);
          J.leftCols(n) = detail::at(A, t, s, n, n);
          J.rightCols(m) = detail::at(B, t, s, n, m);
          if (auto c = detail::at(C, t, s, n, m)) {
            J.leftCols(n) += act(*c, u, 2);
            J.rightCols(m) += act(*c, y, 1);
          }
          return J;
        },
        [=](const Points& p, const Vec&) {
          std::vector<Mat> H(static_cast<std::size_t>(n), Mat::Zero(n + m, n + m));
          auto c = detail::at(C, p[0](0), p[1](0), n, m);
          if (!c) return H;
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
              for (int k = 0; k < m; ++k)
                H[static_cast<std::size_t>(i)](j, n + k) = H[static_cast<std::size_t>(i)](n + k, j) =
                    (*c)(j, k, i);
          return H;
        });
  }
  if (b.D) {
    auto D = b.D;
    const int u2 = 2 * n + m;
    d.f2 = Kernel(
        n, {n, n, m, m},
        [=](const Points& p, const Vec& a) {
          Tri3 T = detail::check_tri(D(p[0](0), p[1](0), p[2](0)), n, m);
          return Vec(2.0 * bilinear(T, a.head(n), a.tail(m)));
        },
        [=](const Points& p, const Vec& a) {
          Tri3 T = detail::check_tri(D(p[0](0), p[1](0), p[2](0)), n, m);
          Mat J = Mat::Zero(n, 2 * n + 2 * m);
          J.leftCols(n) = 2.0 * act(T, a.tail(m), 2);
          J.middleCols(u2, m) = 2.0 * act(T, a.head(n), 1);
          return J;
        },
        [=](const Points& p, const Vec&) {
          Tri3 T = detail::check_tri(D(p[0](0), p[1](0), p[2](0)), n, m);
          std::vector<Mat> H(static_cast<std::size_t>(n), Mat::Zero(2 * n + 2 * m, 2 * n + 2 * m));
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
              for (int k = 0; k < m; ++k)
                H[static_cast<std::size_t>(i)](j, u2 + k) = H[static_cast<std::size_t>(i)](u2 + k, j) =
                    2.0 * T(j, k, i);
          return H;
        });
  }
  if (b.P1 || b.Q1 || b.R1) {
    auto P = b.P1, Q = b.Q1, R = b.R1;
    auto blocks = [=](double t) {
      Mat H(n + m, n + m);
      H.topLeftCorner(n, n) = detail::sym(detail::at(P, t, n, n));
      H.topRightCorner(n, m) = detail::at(Q, t, n, m);
      H.bottomLeftCorner(m, n) = H.topRightCorner(n, m).transpose();
      H.bottomRightCorner(m, m) = detail::sym(detail::at(R, t, m, m));
      return H;
    };
    d.F1 = Kernel::scalar(
        {n, m}, [=](const Points& p, const Vec& a) { return 0.5 * a.dot(blocks(p[0](0)) * a); },
        [=](const Points& p, const Vec& a) { return Vec(blocks(p[0](0)) * a); },
        [=](const Points& p, const Vec&) { return blocks(p[0](0)); });
  }
  if (b.P2 || b.Q2 || b.R2) {
    auto P = b.P2, Q = b.Q2, R = b.R2;
    // Hessian of y1P2y2 + 2y1Q2u2 + u1R2u2 in (y1, y2, u1, u2).
    auto blocks = [=](double t, double s) {
      const int q = 2 * n + 2 * m;
      Mat H = Mat::Zero(q, q);
      Mat P2 = detail::at(P, t, s, n, n), Q2 = detail::at(Q, t, s, n, m), R2 = detail::at(R, t, s, m, m);
      H.block(0, n, n, n) = P2;
      H.block(n, 0, n, n) = P2.transpose();
      H.block(0, 2 * n + m, n, m) = 2.0 * Q2;
      H.block(2 * n + m, 0, m, n) = 2.0 * Q2.transpose();
      H.block(2 * n, 2 * n + m, m, m) = R2;
      H.block(2 * n + m, 2 * n, m, m) = R2.transpose();
      return H;
    };
    d.F2 = Kernel::scalar(
        {n, n, m, m},
        [=](const Points& p, const Vec& a) { return 0.5 * a.dot(blocks(p[0](0), p[1](0)) * a); },
        [=](const Points& p, const Vec& a) { return Vec(blocks(p[0](0), p[1](0)) * a); },
        [=](const Points& p, const Vec&) { return blocks(p[0](0), p[1](0)); });
  }
  return make_problem(d);
}

inline Problem to_problem(const BilinearProblem1& b) { return to_problem(lift(b)); }

// ------------------------------------------------------------ sampled data

/// Kernels sampled on the causal triangle of a grid. D is evaluated on
/// demand since it has a cube of nodes.
class Sampled {
 public:
  Sampled(const BilinearProblem2& b, const Grid& g) : b_(b), g_(g), n_(b.n), m_(b.m) {
    if (g.kind() != GridKind::interval) throw ShapeError("bilinear: interval grid required");
    const int N = g.size();
    A_.resize(static_cast<std::size_t>(N * N));
    B_.resize(static_cast<std::size_t>(N * N));
    C_.resize(static_cast<std::size_t>(N * N));
    for (int i = 0; i < N; ++i)
      for (int l = 0; l <= i; ++l) {
        const auto k = idx(i, l);
        A_[k] = detail::at(b.A, t(i), t(l), n_, n_);
        B_[k] = detail::at(b.B, t(i), t(l), n_, m_);
        C_[k] = detail::at(b.C, t(i), t(l), n_, m_);
      }
    for (int l = 0; l < N; ++l) {
      P1_.push_back(detail::sym(detail::at(b.P1, t(l), n_, n_)));
      Q1_.push_back(detail::at(b.Q1, t(l), n_, m_));
      R1_.push_back(detail::sym(detail::at(b.R1, t(l), m_, m_)));
    }
    has_two_point_ = static_cast<bool>(b.P2 || b.Q2 || b.R2);
    if (has_two_point_) {
      P2_ = BlockKernel(N, n_, n_);
      Q2_ = BlockKernel(N, n_, m_);
      R2_ = BlockKernel(N, m_, m_);
      for (int l = 0; l < N; ++l)
        for (int k = 0; k < N; ++k) {
          P2_.block(l, k) = 0.5 * (detail::at(b.P2, t(l), t(k), n_, n_) +
                                   detail::at(b.P2, t(k), t(l), n_, n_).transpose());
          Q2_.block(l, k) = detail::at(b.Q2, t(l), t(k), n_, m_);
          R2_.block(l, k) = 0.5 * (detail::at(b.R2, t(l), t(k), m_, m_) +
                                   detail::at(b.R2, t(k), t(l), m_, m_).transpose());
        }
    }
  }

  int n() const { return n_; }
  int m() const { return m_; }
  const Grid& grid() const { return g_; }
  double t(int i) const { return g_.node(i)(0); }

  const Mat& A(int i, int l) const { return A_[idx(i, l)]; }
  const Mat& B(int i, int l) const { return B_[idx(i, l)]; }
  const std::optional<Tri3>& C(int i, int l) const { return C_[idx(i, l)]; }
  std::optional<Tri3> D(int i, int l, int k) const { return detail::at(b_.D, t(i), t(l), t(k), n_, m_); }
  bool has_D() const { return static_cast<bool>(b_.D); }

  const Mat& P1(int l) const { return P1_[static_cast<std::size_t>(l)]; }
  const Mat& Q1(int l) const { return Q1_[static_cast<std::size_t>(l)]; }
  const Mat& R1(int l) const { return R1_[static_cast<std::size_t>(l)]; }

  /// Two-point blocks, with P2 and R2 replaced by their swap averages.
  bool has_two_point() const { return has_two_point_; }
  const BlockKernel& P2() const { return P2_; }
  const BlockKernel& Q2() const { return Q2_; }
  const BlockKernel& R2() const { return R2_; }

 private:
  std::size_t idx(int i, int l) const { return static_cast<std::size_t>(i * g_.size() + l); }

  BilinearProblem2 b_;
  Grid g_;
  int n_, m_;
  std::vector<Mat> A_, B_;
  std::vector<std::optional<Tri3>> C_;
  std::vector<Mat> P1_, Q1_, R1_;
  bool has_two_point_ = false;
  BlockKernel P2_, Q2_, R2_;
};

/// A1(i,l) = A + C u_l^{(2)} + Σ_k w^{(i)}_k D(i,l,k) u_k^{(2)},
/// B1(i,l) = B + C y_l^{(1)} + Σ_k w^{(i)}_k D(i,k,l) y_k^{(1)}.
inline volterra::Linearization linearization(const Sampled& S, const Field& y, const Control& u) {
  const Grid& g = S.grid();
  const int N = g.size(), n = S.n(), m = S.m();
  volterra::Linearization L{BlockKernel(N, n, n), BlockKernel(N, n, m)};
  for (int i = 0; i < N; ++i)
    for (int l = 0; l <= i; ++l) {
      Mat a = S.A(i, l), b = S.B(i, l);
      if (const auto& c = S.C(i, l)) {
        a += act(*c, u.at(l), 2);
        b += act(*c, y.at(l), 1);
      }
      if (S.has_D())
        for (int k = 0; k <= i; ++k) {
          const double wk = g.partial_weight(i, k);
          if (wk == 0) continue;
          a += wk * act(*S.D(i, l, k), u.at(k), 2);
          b += wk * act(*S.D(i, k, l), y.at(k), 1);
        }
      L.A1.block(i, l) = a;
      L.B1.block(i, l) = b;
    }
  return L;
}

/// Γ_l = Σ_{i≥l} W(i,l) ψ_i C(i,l), the coefficient of y_lᵀ(·)u_l that the
/// costate adds to Q1.
inline std::vector<Mat> gamma(const Sampled& S, const CoField& psi) {
  const Grid& g = S.grid();
  std::vector<Mat> G(static_cast<std::size_t>(g.size()), Mat::Zero(S.n(), S.m()));
  for (int l = 0; l < g.size(); ++l)
    for (int i = l; i < g.size(); ++i) {
      const double w = g.tail_weight(l, i);
      if (w != 0 && S.C(i, l)) G[static_cast<std::size_t>(l)] += w * contract_output(*S.C(i, l), psi.at(i).transpose());
    }
  return G;
}

/// Ξ(l,k) = Σ_{i≥max(l,k)} W2(l,k,i) ψ_i D(i,l,k), the costate part of the
/// two-point y-u block.
inline BlockKernel xi(const Sampled& S, const CoField& psi) {
  const Grid& g = S.grid();
  const int N = g.size();
  BlockKernel X(N, S.n(), S.m());
  if (!S.has_D()) return X;
  for (int l = 0; l < N; ++l)
    for (int k = 0; k < N; ++k)
      for (int i = std::max(l, k); i < N; ++i) {
        const double w = g.tail_weight2(l, k, i);
        if (w != 0) X.block(l, k) += w * contract_output(*S.D(i, l, k), psi.at(i).transpose());
      }
  return X;
}

// ------------------------------------------------------------ pointwise closure

/// Tail integrals at one node of the first-order system:
/// α = ∫_t^T ψA, ζ = ∫_t^T ψB, Γ = ∫_t^T ψC.
struct NodeTerms {
  CoVec alpha;
  CoVec zeta;
  Mat Gamma;
};

/// Control from ∇uH = 0: u = -R⁻¹[(Q + Γ)ᵀy + ζᵀ].
inline Vec closure_control(const Mat& Q, const Mat& R, const Vec& y, const NodeTerms& t) {
  Mat Qg = Q + t.Gamma;
  Vec rhs = Qg.transpose() * y + t.zeta.transpose();
  return -CheckedLU(R, "bilinear: R at a node").solve(rhs);
}

/// ψ = yᵀP + uᵀ(Q + Γ)ᵀ + α.
inline CoVec costate_rhs(const Mat& P, const Mat& Q, const Vec& y, const Vec& u, const NodeTerms& t) {
  return y.transpose() * P + u.transpose() * (Q + t.Gamma).transpose() + t.alpha;
}

/// The costate with u eliminated:
/// ψ = yᵀ[P - (Q+Γ)R⁻¹(Q+Γ)ᵀ] + α - ζR⁻¹(Q+Γ)ᵀ.
/// Γ carries ψ, so the y(Q+Γ)R⁻¹Γᵀ part is the quadratic term in ψ.
inline CoVec closure_costate(const Mat& P, const Mat& Q, const Mat& R, const Vec& y, const NodeTerms& t) {
  Mat Qg = Q + t.Gamma;
  CheckedLU lu(R, "bilinear: R at a node");
  Mat RiQt = lu.solve(Mat(Qg.transpose()));
  return y.transpose() * (P - Qg * RiQt) + t.alpha - t.zeta * RiQt;
}

// ------------------------------------------------------------ residuals

struct Residuals {
  double state = 0;
  double costate = 0;
  double stationarity = 0;
};

namespace detail {

/// Running-cost gradients in (y, u) at node l, including the two-point part.
inline Vec cost_gradient(const Sampled& S, const Field& y, const Control& u, int l) {
  const Grid& g = S.grid();
  const int n = S.n(), m = S.m();
  Vec a(n + m);
  a.head(n) = S.P1(l) * y.at(l) + S.Q1(l) * u.at(l);
  a.tail(m) = S.Q1(l).transpose() * y.at(l) + S.R1(l) * u.at(l);
  if (!S.has_two_point()) return a;
  for (int k = 0; k < g.size(); ++k) {
    const double wk = g.weight(k);
    a.head(n) += wk * (S.P2().block(l, k) * y.at(k) + S.Q2().block(l, k) * u.at(k));
    a.tail(m) += wk * (S.Q2().block(k, l).transpose() * y.at(k) + S.R2().block(l, k) * u.at(k));
  }
  return a;
}

/// Stationarity operator for fixed (y, ψ): ∇uH = H u + rhs.
inline Mat control_operator(const Sampled& S) {
  const Grid& g = S.grid();
  const int N = g.size(), m = S.m();
  Mat H = Mat::Zero(N * m, N * m);
  for (int l = 0; l < N; ++l) {
    H.block(l * m, l * m, m, m) += S.R1(l);
    if (!S.has_two_point()) continue;
    for (int k = 0; k < N; ++k) H.block(l * m, k * m, m, m) += g.weight(k) * S.R2().block(l, k);
  }
  return H;
}

/// The u-independent part of ∇uH for fixed (y, ψ).
inline Vec control_rhs(const Sampled& S, const volterra::Linearization& L, const Field& y,
                       const CoField& psi) {
  const Grid& g = S.grid();
  const int N = g.size(), m = S.m();
  Vec r = Vec::Zero(N * m);
  for (int l = 0; l < N; ++l) {
    Vec v = S.Q1(l).transpose() * y.at(l);
    if (S.has_two_point())
      for (int k = 0; k < N; ++k) v += g.weight(k) * S.Q2().block(k, l).transpose() * y.at(k);
    for (int i = l; i < N; ++i) {
      const double w = g.tail_weight(l, i);
      if (w != 0) v += w * L.B1.block(i, l).transpose() * psi.at(i);
    }
    r.segment(l * m, m) = v;
  }
  return r;
}

/// Backward march of ψ_l = ∇_y of the cost + Σ_{i≥l} W(i,l) ψ_i A1(i,l).
inline CoField march_costate(const Sampled& S, const volterra::Linearization& L, const Field& y,
                             const Control& u) {
  const Grid& g = S.grid();
  const int N = g.size(), n = S.n();
  Mat psi = Mat::Zero(n, N);
  for (int l = N - 1; l >= 0; --l) {
    CoVec rhs = cost_gradient(S, y, u, l).head(n).transpose();
    for (int i = l + 1; i < N; ++i) {
      const double w = g.tail_weight(l, i);
      if (w != 0) rhs += w * psi.col(i).transpose() * L.A1.block(i, l);
    }
    Mat M = Mat::Identity(n, n) - g.tail_weight(l, l) * L.A1.block(l, l);
    psi.col(l) = CheckedLU(Mat(M.transpose()), "bilinear costate at node " + std::to_string(l))
                     .solve(Vec(rhs.transpose()));
  }
  return CoField(psi);
}

}  // namespace detail

/// Residuals of state, costate and ∇uH = 0 at (y, u, ψ), from the bilinear
/// data directly.
inline Residuals residuals(const Sampled& S, const Problem& p, const Field& y, const Control& u,
                           const CoField& psi) {
  const Grid& g = S.grid();
  const int N = g.size(), n = S.n(), m = S.m();
  Residuals r;
  r.state = volterra::state_residual(p, g, y, u);
  volterra::Linearization L = linearization(S, y, u);
  for (int l = 0; l < N; ++l) {
    CoVec e = detail::cost_gradient(S, y, u, l).head(n).transpose();
    for (int i = l; i < N; ++i) {
      const double w = g.tail_weight(l, i);
      if (w != 0) e += w * psi.at(i).transpose() * L.A1.block(i, l);
    }
    r.costate = std::max(r.costate, (e - psi.at(l).transpose()).cwiseAbs().maxCoeff());
  }
  Eigen::Map<const Vec> uv(u.values().data(), N * m);
  Vec grad = detail::control_operator(S) * uv + detail::control_rhs(S, L, y, psi);
  r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  return r;
}

namespace detail {

inline std::string history_text(const std::vector<double>& h) {
  std::ostringstream os;
  os.precision(3);
  const std::size_t from = h.size() > 8 ? h.size() - 8 : 0;
  for (std::size_t k = from; k < h.size(); ++k) os << (k > from ? ", " : "") << h[k];
  return os.str();
}

inline Triple finish(const Sampled& S, const Problem& p, Control u, CoField psi,
                     std::vector<double> history, const NcOptions& opt) {
  const Grid& g = S.grid();
  Triple t;
  t.state = volterra::solve_state(p, u, g, opt.state);
  t.control = std::move(u);
  t.costate = std::move(psi);
  t.cost = volterra::cost(p, g, t.state, t.control);
  Residuals r = residuals(S, p, t.state, t.control, t.costate);
  t.state_residual = r.state;
  t.costate_residual = r.costate;
  t.stationarity_residual = r.stationarity;
  t.sweeps = static_cast<int>(history.size());
  t.history = std::move(history);
  return t;
}

}  // namespace detail

// ------------------------------------------------------------ first order

/// Backward sweep for fixed y: at each node the costate is the fixed point
/// of the eliminated-control closure, then u follows from ∇uH = 0.
inline std::pair<CoField, Control> backward_sweep(const Sampled& S, const Field& y, const CoField& warm,
                                                  int max_inner = 200) {
  const Grid& g = S.grid();
  const int N = g.size(), n = S.n(), m = S.m();
  Mat psi = warm.values();
  Mat u = Mat::Zero(m, N);
  for (int l = N - 1; l >= 0; --l) {
    NodeTerms tail{CoVec::Zero(n), CoVec::Zero(m), Mat::Zero(n, m)};
    for (int i = l + 1; i < N; ++i) {
      const double w = g.tail_weight(l, i);
      if (w == 0) continue;
      const CoVec pi = psi.col(i).transpose();
      tail.alpha += w * pi * S.A(i, l);
      tail.zeta += w * pi * S.B(i, l);
      if (S.C(i, l)) tail.Gamma += w * contract_output(*S.C(i, l), pi);
    }
    const double wll = g.tail_weight(l, l);
    auto terms = [&](const CoVec& pl) {
      NodeTerms t = tail;
      if (wll == 0) return t;
      t.alpha += wll * pl * S.A(l, l);
      t.zeta += wll * pl * S.B(l, l);
      if (S.C(l, l)) t.Gamma += wll * contract_output(*S.C(l, l), pl);
      return t;
    };
    const Vec yl = y.at(l);
    CoVec pl = psi.col(l).transpose();
    double change = 0;
    int it = 0;
    for (; it < max_inner; ++it) {
      CoVec next = closure_costate(S.P1(l), S.Q1(l), S.R1(l), yl, terms(pl));
      change = (next - pl).cwiseAbs().maxCoeff();
      pl = next;
      if (change <= 1e-15 * std::max(1.0, pl.cwiseAbs().maxCoeff())) break;
      if (wll == 0) break;
    }
    if (it == max_inner)
      throw ConvergenceError("solve_nc1: costate closure did not converge at node " + std::to_string(l) +
                                 " (t = " + std::to_string(S.t(l)) + ")",
                             change, it);
    psi.col(l) = pl.transpose();
    u.col(l) = closure_control(S.Q1(l), S.R1(l), yl, terms(pl));
  }
  return {CoField(psi), Control(u)};
}

/// Alternating sweeps: forward state for the current control, backward
/// costate with the control eliminated, control from ∇uH = 0.
inline Triple solve_nc1(const BilinearProblem1& b, const Grid& g, const NcOptions& opt = {}) {
  BilinearProblem2 b2 = lift(b);
  Sampled S(b2, g);
  Problem p = to_problem(b2);
  const int N = g.size();
  Control u(b.m, N);
  CoField psi(b.n, N);
  Field y;
  std::vector<double> history;
  for (int sweep = 1;; ++sweep) {
    y = volterra::solve_state(p, u, g, opt.state);
    auto [next_psi, next_u] = backward_sweep(S, y, psi, opt.max_inner);
    const double change = (next_u - u).sup_norm();
    history.push_back(change);
    psi = std::move(next_psi);
    u = u + opt.relaxation * (next_u - u);
    if (change <= opt.tol) break;
    if (sweep >= opt.max_sweeps || !std::isfinite(change))
      throw ConvergenceError("solve_nc1: no convergence after " + std::to_string(sweep) +
                                 " sweeps; control changes " + detail::history_text(history),
                             change, sweep);
  }
  return detail::finish(S, p, u, psi, std::move(history), opt);
}

/// δ²J = Σ w [δyᵀPδy + 2δyᵀ(Q + Γ)δu + δuᵀRδu], δy from the linearized
/// state.
inline double second_variation1(const BilinearProblem1& b, const Grid& g, const Triple& s,
                                const Control& du) {
  Sampled S(lift(b), g);
  volterra::Linearization L = linearization(S, s.state, s.control);
  Field dy = volterra::linearized_state(L, g, du);
  auto G = gamma(S, s.costate);
  double v = 0;
  for (int l = 0; l < g.size(); ++l) {
    const Vec y = dy.at(l), u = du.at(l);
    v += g.weight(l) * (y.dot(S.P1(l) * y) + 2 * y.dot((S.Q1(l) + G[static_cast<std::size_t>(l)]) * u) +
                        u.dot(S.R1(l) * u));
  }
  return v;
}

/// Λ maps δu to δy; Λ1, Λ2 give δ²J = Σ w δuᵀΛ1δu + ΣΣ w w δuᵀΛ2δu.
struct LambdaKernels {
  BlockKernel Lambda;
  std::vector<Mat> Lambda1;
  BlockKernel Lambda2;
  QuadIntegralForm form;
};

inline LambdaKernels lambda_kernels(const BilinearProblem1& b, const Grid& g, const Triple& s) {
  Sampled S(lift(b), g);
  const int N = g.size(), n = b.n, m = b.m;
  volterra::Linearization L = linearization(S, s.state, s.control);
  auto G = gamma(S, s.costate);
  volterra::AccessoryProblem acc;
  acc.A1 = L.A1;
  acc.B1 = L.B1;
  acc.P0 = Mat::Zero(n, n);
  for (int l = 0; l < N; ++l) {
    acc.P1.push_back(S.P1(l));
    acc.Q1.push_back(S.Q1(l) + G[static_cast<std::size_t>(l)]);
    acc.R1.push_back(S.R1(l));
  }
  acc.P2 = BlockKernel(N, n, n);
  acc.Q2 = BlockKernel(N, n, m);
  acc.R2 = BlockKernel(N, m, m);
  acc = volterra::reduce_accessory(std::move(acc), g);
  LambdaKernels k{acc.S1, acc.R1, acc.K2, volterra::form(acc)};
  return k;
}

/// Pointwise test on [[P, Q+Γ], [(Q+Γ)ᵀ, R]] at every node, with the verdict
/// taken from the Gram matrix of (Λ1, Λ2).
inline PDReport sufficiency1(const BilinearProblem1& b, const Grid& g, const Triple& s) {
  Sampled S(lift(b), g);
  const int n = b.n, m = b.m;
  auto G = gamma(S, s.costate);
  LambdaKernels k = lambda_kernels(b, g, s);
  PDReport r = check_pd_gram(k.form, g);
  r.min_eig_pointwise = std::numeric_limits<double>::infinity();
  for (int l = 0; l < g.size(); ++l) {
    Mat M(n + m, n + m);
    M.topLeftCorner(n, n) = S.P1(l);
    M.topRightCorner(n, m) = S.Q1(l) + G[static_cast<std::size_t>(l)];
    M.bottomLeftCorner(m, n) = M.topRightCorner(n, m).transpose();
    M.bottomRightCorner(m, m) = S.R1(l);
    r.min_eig_pointwise = std::min(r.min_eig_pointwise, intocp::detail::min_eig(M));
  }
  r.pointwise = classify(r.min_eig_pointwise);
  return r;
}

// ------------------------------------------------------------ second order

/// Alternating sweeps: forward state, backward costate, then ∇uH = 0 solved
/// as one linear system over the whole horizon.
inline Triple solve_nc2(const BilinearProblem2& b, const Grid& g, const NcOptions& opt = {}) {
  Sampled S(b, g);
  Problem p = to_problem(b);
  const int N = g.size(), m = b.m;
  CheckedLU H(detail::control_operator(S), "solve_nc2: control system");
  Control u(m, N);
  CoField psi(b.n, N);
  Field y;
  std::vector<double> history;
  for (int sweep = 1;; ++sweep) {
    y = volterra::solve_state(p, u, g, opt.state);
    volterra::Linearization L = linearization(S, y, u);
    psi = detail::march_costate(S, L, y, u);
    Vec next = -H.solve(detail::control_rhs(S, L, y, psi));
    Control nu(Mat(Eigen::Map<const Mat>(next.data(), m, N)));
    const double change = (nu - u).sup_norm();
    history.push_back(change);
    u = u + opt.relaxation * (nu - u);
    if (change <= opt.tol) break;
    if (sweep >= opt.max_sweeps || !std::isfinite(change))
      throw ConvergenceError("solve_nc2: no convergence after " + std::to_string(sweep) +
                                 " sweeps; control changes " + detail::history_text(history),
                             change, sweep);
  }
  y = volterra::solve_state(p, u, g, opt.state);
  psi = detail::march_costate(S, linearization(S, y, u), y, u);
  return detail::finish(S, p, u, psi, std::move(history), opt);
}

/// The pair (M1, M2) on (δy, δu), assembled from the bilinear data.
inline QuadIntegralForm joint_form(const BilinearProblem2& b, const Grid& g, const Triple& s) {
  Sampled S(b, g);
  const int N = g.size(), n = b.n, m = b.m, q = n + m;
  auto G = gamma(S, s.costate);
  BlockKernel X = xi(S, s.costate);
  QuadIntegralForm f;
  for (int l = 0; l < N; ++l) {
    Mat M(q, q);
    M.topLeftCorner(n, n) = S.P1(l);
    M.topRightCorner(n, m) = S.Q1(l) + G[static_cast<std::size_t>(l)];
    M.bottomLeftCorner(m, n) = M.topRightCorner(n, m).transpose();
    M.bottomRightCorner(m, m) = S.R1(l);
    f.R1.push_back(M);
  }
  f.K = BlockKernel(N, q, q);
  for (int l = 0; l < N; ++l)
    for (int k = 0; k < N; ++k) {
      auto B = f.K.block(l, k);
      Mat Q2 = X.block(l, k);
      Mat Q2t = X.block(k, l).transpose();
      if (S.has_two_point()) {
        B.topLeftCorner(n, n) = S.P2().block(l, k);
        B.bottomRightCorner(m, m) = S.R2().block(l, k);
        Q2 += S.Q2().block(l, k);
        Q2t += S.Q2().block(k, l).transpose();
      }
      B.topRightCorner(n, m) = Q2;
      B.bottomLeftCorner(m, n) = Q2t;
    }
  return f;
}

/// Accessory problem of the second-order system; its reduced form is
/// δu ↦ δ²J.
inline volterra::AccessoryProblem accessory2(const BilinearProblem2& b, const Grid& g, const Triple& s) {
  Sampled S(b, g);
  const int N = g.size(), n = b.n, m = b.m;
  volterra::Linearization L = linearization(S, s.state, s.control);
  auto G = gamma(S, s.costate);
  BlockKernel X = xi(S, s.costate);
  volterra::AccessoryProblem acc;
  acc.A1 = L.A1;
  acc.B1 = L.B1;
  acc.P0 = Mat::Zero(n, n);
  for (int l = 0; l < N; ++l) {
    acc.P1.push_back(S.P1(l));
    acc.Q1.push_back(S.Q1(l) + G[static_cast<std::size_t>(l)]);
    acc.R1.push_back(S.R1(l));
  }
  acc.P2 = S.has_two_point() ? S.P2() : BlockKernel(N, n, n);
  acc.Q2 = X;
  if (S.has_two_point()) acc.Q2.matrix() += S.Q2().matrix();
  acc.R2 = S.has_two_point() ? S.R2() : BlockKernel(N, m, m);
  return volterra::reduce_accessory(std::move(acc), g);
}

struct Sufficiency {
  /// (M1, M2) on L²(R^{n+m}); positive definite here is sufficient.
  PDReport joint;
  /// Reduced form in δu alone.
  PDReport sharpened;
  Verdict verdict = Verdict::inconclusive;
};

inline Sufficiency sufficiency2(const BilinearProblem2& b, const Grid& g, const Triple& s) {
  Sufficiency r;
  QuadIntegralForm jf = joint_form(b, g, s);
  r.joint = check_pd_gram(jf, g);
  QuadIntegralForm sf = volterra::form(accessory2(b, g, s));
  r.sharpened = check_pd_gram(sf, g);
  r.verdict = r.joint.verdict == Verdict::positive_definite ? Verdict::positive_definite
                                                            : r.sharpened.verdict;
  return r;
}

/// δ²J of the second-order system through the joint form at (δy(δu), δu).
inline double second_variation2(const BilinearProblem2& b, const Grid& g, const Triple& s,
                                const Control& du) {
  Sampled S(b, g);
  Field dy = volterra::linearized_state(linearization(S, s.state, s.control), g, du);
  Mat d(b.n + b.m, g.size());
  d.topRows(b.n) = dy.values();
  d.bottomRows(b.m) = du.values();
  return joint_form(b, g, s).value(Control(d), g);
}

// ------------------------------------------------------------ Volterra-Lotka

/// x(t) = x0 + ∫_0^t [A x + b(x ⊗ x)] ds
///       + ½∫_0^t∫_0^t [c^j x_j(s) u_j(σ) + d^{jk} x_j(s) x_k(σ) u_j(s) u_k(σ)] dσ ds
/// with A, b fading as e^{-decay (t-s)}, c, d as e^{-decay (t-σ)}, and cost
/// ∫ ½p|x|² + ½r|u|². b and d have dims {n, n, n}; c(i, j) multiplies
/// x_j u_j in component i. One control per species.
struct LotkaData {
  int n = 1;
  int m = 1;
  Vec x0;
  Mat A;
  Tri3 b;
  Mat c;
  Tri3 d;
  double decay = 1.0;
  double p = 1.0;
  double r = 1.0;
};

namespace detail {

inline bool zero_tri(const Tri3& T) {
  for (Eigen::Index i = 0; i < T.dim(0); ++i)
    for (Eigen::Index j = 0; j < T.dim(1); ++j)
      for (Eigen::Index k = 0; k < T.dim(2); ++k)
        if (T(i, j, k) != 0) return false;
  return true;
}

inline void check_lotka(const LotkaData& L) {
  const int n = L.n;
  auto cube = [n](const Tri3& T) {
    return (T.dim(0) == 0 && T.dim(1) == 0 && T.dim(2) == 0) ||
           (T.dim(0) == n && T.dim(1) == n && T.dim(2) == n);
  };
  if (n < 1 || L.m != n) throw ShapeError("lotka: need one control per species (m == n)");
  if (L.x0.size() != n) throw ShapeError("lotka: x0 must have n entries");
  if (L.A.rows() != n || L.A.cols() != n) throw ShapeError("lotka: A must be n x n");
  if (L.c.size() && (L.c.rows() != n || L.c.cols() != n)) throw ShapeError("lotka: c must be n x n");
  if (!cube(L.b) || !cube(L.d)) throw ShapeError("lotka: b and d must have dims {n, n, n}");
}

}  // namespace detail

/// Whether the bilinear encoding carries the whole model, i.e. b = d = 0.
inline bool lotka_is_bilinear(const LotkaData& L) {
  return (L.b.dim(0) == 0 || detail::zero_tri(L.b)) && (L.d.dim(0) == 0 || detail::zero_tri(L.d));
}

/// The bilinear part of the model: A and c. The quadratic b and d terms do
/// not fit the bilinear template and are left to lotka_problem.
inline BilinearProblem2 lotka_preset(const LotkaData& L) {
  detail::check_lotka(L);
  const int n = L.n;
  BilinearProblem2 b;
  b.n = n;
  b.m = L.m;
  b.y0 = [x0 = L.x0](double) { return x0; };
  b.A = [A = L.A, k = L.decay](double t, double s) { return Mat(A * std::exp(-k * (t - s))); };
  if (L.c.size() && !L.c.isZero(0))
    b.D = [c = L.c, k = L.decay, n](double t, double, double sg) {
      Tri3 T({n, n, n});
      const double e = 0.5 * std::exp(-k * (t - sg));
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) T(j, j, i) = e * c(i, j);
      return T;
    };
  b.P1 = [p = L.p, n](double) { return Mat(p * Mat::Identity(n, n)); };
  b.R1 = [r = L.r, n](double) { return Mat(r * Mat::Identity(n, n)); };
  return b;
}

/// The full model in the generic Volterra pipeline. Derivatives of the
/// dynamics come from finite differences.
inline Problem lotka_problem(const LotkaData& L) {
  detail::check_lotka(L);
  const int n = L.n, m = L.m;
  const bool has_b = L.b.dim(0) && !detail::zero_tri(L.b);
  const bool has_d = L.d.dim(0) && !detail::zero_tri(L.d);
  const bool has_c = L.c.size() && !L.c.isZero(0);
  ProblemDef d;
  d.family = Family::volterra;
  d.n = n;
  d.m = m;
  d.forcing = [x0 = L.x0](const Point&) { return x0; };
  d.f1 = Kernel(n, {n, m}, [A = L.A, b = L.b, k = L.decay, has_b, n](const Points& p, const Vec& a) {
    Vec x = a.head(n);
    Vec v = A * x;
    if (has_b) v += bilinear(b, x, x);
    return Vec(std::exp(-k * (p[0](0) - p[1](0))) * v);
  });
  if (has_c || has_d)
    d.f2 = Kernel(n, {n, n, m, m},
                  [c = L.c, dd = L.d, k = L.decay, has_c, has_d, n, m](const Points& p, const Vec& a) {
                    Vec x1 = a.segment(0, n), x2 = a.segment(n, n);
                    Vec u1 = a.segment(2 * n, m), u2 = a.segment(2 * n + m, m);
                    Vec v = Vec::Zero(n);
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < n; ++j) {
                        if (has_c) v(i) += c(i, j) * x1(j) * u2(j);
                        if (has_d)
                          for (int l = 0; l < n; ++l) v(i) += dd(j, l, i) * x1(j) * x2(l) * u1(j) * u2(l);
                      }
                    return Vec(std::exp(-k * (p[0](0) - p[2](0))) * v);
                  });
  d.F1 = Kernel::scalar(
      {n, m},
      [pp = L.p, r = L.r, n, m](const Points&, const Vec& a) {
        return 0.5 * pp * a.head(n).squaredNorm() + 0.5 * r * a.tail(m).squaredNorm();
      },
      [pp = L.p, r = L.r, n, m](const Points&, const Vec& a) {
        Vec gr(n + m);
        gr << pp * a.head(n), r * a.tail(m);
        return gr;
      },
      [pp = L.p, r = L.r, n, m](const Points&, const Vec&) {
        Vec dg(n + m);
        dg << Vec::Constant(n, pp), Vec::Constant(m, r);
        return Mat(dg.asDiagonal());
      });
  return make_problem(d);
}

/// Standard harvesting configuration: growth on the diagonal of A,
/// interaction off it, crowding b_i^{ii}, harvesting c(i,i), optional
/// quadratic-in-u d_i^{ii}.
inline LotkaData lotka_data(int n, const presets::Params& given = {}) {
  auto P = presets::resolve("lotka",
                            {{"growth", 0.5}, {"interaction", -0.1}, {"crowding", -0.3}, {"harvest", -0.4},
                             {"dquad", 0.0}, {"decay", 0.5}, {"p", 1.0}, {"r", 1.0}, {"x0", 1.0}},
                            given);
  if (n < 1) throw ShapeError("lotka: need at least one species");
  LotkaData L;
  L.n = L.m = n;
  L.x0 = Vec::Constant(n, P["x0"]);
  L.A = Mat::Constant(n, n, P["interaction"]);
  L.A.diagonal().setConstant(P["growth"]);
  L.b = Tri3({n, n, n});
  L.d = Tri3({n, n, n});
  for (int i = 0; i < n; ++i) {
    L.b(i, i, i) = P["crowding"];
    L.d(i, i, i) = P["dquad"];
  }
  L.c = P["harvest"] * Mat::Identity(n, n);
  L.decay = P["decay"];
  L.p = P["p"];
  L.r = P["r"];
  return L;
}

// ------------------------------------------------------------ presets

/// Scalar linear-quadratic system, C = 0:
///   A = a e^{-(t-s)}, B = β, P = q, R = r, y0 constant.
inline BilinearProblem1 first_order_lq(const presets::Params& given = {}) {
  auto P = presets::resolve("bilinear1-lq", {{"a", 0.5}, {"beta", 1.0}, {"q", 1.0}, {"r", 1.0}, {"y0", 1.0}},
                            given);
  BilinearProblem1 b;
  b.y0 = [c = P["y0"]](double) { return Vec::Constant(1, c); };
  b.A = [a = P["a"]](double t, double s) { return Mat::Constant(1, 1, a * std::exp(-(t - s))); };
  b.B = [be = P["beta"]](double, double) { return Mat::Constant(1, 1, be); };
  b.P = [q = P["q"]](double) { return Mat::Constant(1, 1, q); };
  b.R = [r = P["r"]](double) { return Mat::Constant(1, 1, r); };
  return b;
}

/// Two states, one control, with a state-control coupling C and a cross
/// cost Q.
inline BilinearProblem1 first_order_coupled(const presets::Params& given = {}) {
  auto P = presets::resolve("bilinear1-coupled",
                            {{"a", 0.3}, {"beta", 0.5}, {"gamma", 0.2}, {"q", 1.0}, {"eta", 0.1}, {"r", 1.0}},
                            given);
  BilinearProblem1 b;
  b.n = 2;
  b.m = 1;
  b.y0 = [](double) { return Vec(Eigen::Vector2d(1.0, 0.5)); };
  b.A = [a = P["a"]](double t, double s) {
    Mat A(2, 2);
    A << a, 0.2, -0.1, 0.5 * a;
    return Mat(A * std::exp(-(t - s)));
  };
  b.B = [be = P["beta"]](double t, double) { return Mat(Eigen::Vector2d(be, 0.5 * be * (1 + t))); };
  b.C = [c = P["gamma"]](double t, double s) {
    Tri3 T({2, 1, 2});
    T(0, 0, 0) = c;
    T(1, 0, 0) = -0.5 * c;
    T(0, 0, 1) = 0.3 * c * std::exp(-(t - s));
    T(1, 0, 1) = c;
    return T;
  };
  b.P = [q = P["q"]](double t) {
    Mat M(2, 2);
    M << q, 0.1 * q, 0.1 * q, 0.5 * q * (1 + t);
    return M;
  };
  b.Q = [e = P["eta"]](double) { return Mat(Eigen::Vector2d(e, -0.5 * e)); };
  b.R = [r = P["r"]](double t) { return Mat::Constant(1, 1, r * (1 + 0.2 * t)); };
  return b;
}

/// first_order_coupled plus D(t,s,σ), P2, Q2 and R2.
inline BilinearProblem2 second_order_coupled(const presets::Params& given = {}) {
  presets::Params base;
  for (const char* k : {"a", "beta", "gamma", "q", "eta", "r"})
    if (given.count(k)) base[k] = given.at(k);
  presets::Params extra;
  for (const auto& [k, v] : given)
    if (!base.count(k)) extra[k] = v;
  auto P = presets::resolve("bilinear2-coupled", {{"delta", 0.2}, {"mu", 0.1}, {"nu", 0.05}, {"rho", 0.2}},
                            extra);
  BilinearProblem2 b = lift(first_order_coupled(base));
  b.D = [d = P["delta"]](double t, double s, double sg) {
    Tri3 T({2, 1, 2});
    T(0, 0, 0) = d * std::exp(-(t - sg));
    T(1, 0, 0) = 0.5 * d;
    T(1, 0, 1) = -d * std::exp(-std::abs(s - sg));
    return T;
  };
  b.P2 = [mu = P["mu"]](double t, double s) { return Mat(mu * std::exp(-std::abs(t - s)) * Mat::Identity(2, 2)); };
  b.Q2 = [nu = P["nu"]](double t, double s) { return Mat(Eigen::Vector2d(nu, nu * (t - s))); };
  b.R2 = [rho = P["rho"]](double t, double s) { return Mat::Constant(1, 1, rho * std::exp(-std::abs(t - s))); };
  return b;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"bilinear1-lq", "bilinear1-coupled", "bilinear2-coupled",
                                              "lotka"};
  return names;
}

inline bool is_first_order(const std::string& name) { return name.rfind("bilinear1-", 0) == 0; }

inline BilinearProblem1 preset1(const std::string& name, const presets::Params& given = {}) {
  if (name == "bilinear1-lq") return first_order_lq(given);
  if (name == "bilinear1-coupled") return first_order_coupled(given);
  throw ConfigError("problem.preset", "unknown first-order bilinear preset '" + name + "'");
}

inline BilinearProblem2 preset2(const std::string& name, const presets::Params& given = {}) {
  if (is_first_order(name)) return lift(preset1(name, given));
  if (name == "bilinear2-coupled") return second_order_coupled(given);
  if (name == "lotka") {
    // Without crowding and the quadratic-in-u term the encoding is exact.
    presets::Params P = given;
    P.emplace("crowding", 0.0);
    P.emplace("dquad", 0.0);
    return lotka_preset(lotka_data(2, P));
  }
  throw ConfigError("problem.preset", "unknown bilinear preset '" + name + "'");
}

}  // namespace intocp::bilinear_control
