#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "intocp/errors.hpp"
#include "intocp/fields.hpp"
#include "intocp/problem.hpp"
#include "intocp/quadform.hpp"
#include "intocp/quadrature.hpp"
#include "intocp/variation.hpp"

namespace intocp::fredholm {

struct SolverOptions {
  /// Sup-norm residual target.
  double tol = 1e-12;
  /// Picard damping α in φ ← (1-α)φ + α RHS(φ).
  double damping = 0.5;
  int max_picard = 200;
  int max_newton = 30;
  /// Picard counts as stalled after 3 consecutive residual ratios above this.
  double stall_ratio = 0.95;
};

struct StateResult {
  Field state;
  int picard_iterations = 0;
  int newton_iterations = 0;
  double residual = 0;
};

struct FredholmSolution {
  Field state;
  CoField costate;
  Control control;
  double cost = 0;
  int picard_iterations = 0;
  int newton_iterations = 0;
  double state_residual = 0;
  double costate_residual = 0;
};

/// Linearization of the state map at (φ, u):
/// δφ(x_i) = Σ_l w_l [A(i,l) δφ_l + B(i,l) δu_l], with
/// A(i,l) = ∇φ f1(x_i,x_l) + Σ_k w_k ∇φ1 f̃2(x_i,x_l,x_k), B likewise in u.
struct Linearization {
  BlockKernel A;
  BlockKernel B;
};

/// Second-order pieces of H and h2 at a solution. D[l] is the Hessian of
/// H(x_l, ·) in (φ, u); X block (l,k) is the cross Hessian of h2(x_l, x_k)
/// with rows (φ1, u1) and columns (φ2, u2).
struct HessianBlocks {
  std::vector<Mat> D;
  BlockKernel X;
};

/// Data of the accessory problem Φ = ∫[AΦ + BU], J_a per the quadratic cost
/// with pointwise blocks P1, Q1, R1 and two-point blocks P2, Q2, R2.
struct AccessoryData {
  BlockKernel A, B;
  std::vector<Mat> P1, Q1, R1;
  BlockKernel P2, Q2, R2;
};

namespace detail {

using namespace ::intocp::detail;

inline void require_fredholm(const Problem& p) {
  if (p.family != Family::fredholm) throw ShapeError("fredholm: problem family is not fredholm");
}

inline void check_fields(const Problem& p, const Grid& g, const Field& phi, const Control& u) {
  if (phi.dim() != p.n || phi.nodes() != g.size() || u.dim() != p.m || u.nodes() != g.size())
    throw ShapeError("fredholm: field or control does not match problem and grid");
}

}  // namespace detail

/// Right-hand side of the discretized state equation. Uses f2 as given;
/// its double sum equals that of the symmetrized kernel.
inline Field state_rhs(const Problem& p, const Grid& g, const Field& phi, const Control& u) {
  const int N = g.size(), n = p.n, m = p.m;
  Field r = p.forcing_field(g);
  Vec a1(n + m), a2(2 * n + 2 * m);
  Points pt;
  for (int i = 0; i < N; ++i) {
    pt[0] = g.node(i);
    Vec acc = Vec::Zero(n);
    if (!p.f1.is_zero())
      for (int j = 0; j < N; ++j) {
        pt[1] = g.node(j);
        a1 << phi.at(j), u.at(j);
        acc += g.weight(j) * p.f1.value(pt, a1);
      }
    if (!p.f2_original.is_zero())
      for (int j = 0; j < N; ++j) {
        pt[1] = g.node(j);
        a2.segment(0, n) = phi.at(j);
        a2.segment(2 * n, m) = u.at(j);
        Vec inner = Vec::Zero(n);
        for (int k = 0; k < N; ++k) {
          pt[2] = g.node(k);
          a2.segment(n, n) = phi.at(k);
          a2.segment(2 * n + m, m) = u.at(k);
          inner += g.weight(k) * p.f2_original.value(pt, a2);
        }
        acc += 0.5 * g.weight(j) * inner;
      }
    r.at(i) += acc;
  }
  return r;
}

inline double state_residual(const Problem& p, const Grid& g, const Field& phi, const Control& u) {
  return (state_rhs(p, g, phi, u) - phi).sup_norm();
}

inline Linearization linearize(const Problem& p, const Grid& g, const Field& phi, const Control& u) {
  detail::require_fredholm(p);
  detail::check_fields(p, g, phi, u);
  const int N = g.size(), n = p.n, m = p.m;
  Linearization L{BlockKernel(N, n, n), BlockKernel(N, n, m)};
  Vec a1(n + m), a2(2 * n + 2 * m);
  const auto i1 = detail::pair_slot_indices(n, m, 0);
  Points pt;
  for (int i = 0; i < N; ++i) {
    pt[0] = g.node(i);
    for (int l = 0; l < N; ++l) {
      pt[1] = g.node(l);
      if (!p.f1.is_zero()) {
        a1 << phi.at(l), u.at(l);
        Mat J = p.f1.jacobian(pt, a1);
        L.A.block(i, l) += J.leftCols(n);
        L.B.block(i, l) += J.rightCols(m);
      }
      if (p.f2.is_zero()) continue;
      a2.segment(0, n) = phi.at(l);
      a2.segment(2 * n, m) = u.at(l);
      Mat acc = Mat::Zero(n, n + m);
      for (int k = 0; k < N; ++k) {
        pt[2] = g.node(k);
        a2.segment(n, n) = phi.at(k);
        a2.segment(2 * n + m, m) = u.at(k);
        acc += g.weight(k) * detail::take_cols(p.f2.jacobian(pt, a2), i1);
      }
      L.A.block(i, l) += acc.leftCols(n);
      L.B.block(i, l) += acc.rightCols(m);
    }
  }
  return L;
}

/// Solves the state equation for control u by damped Picard iteration,
/// switching to Newton when Picard stalls or diverges.
inline StateResult solve_state_detailed(const Problem& p, const Control& u, const Grid& g,
                                        const SolverOptions& opt = {},
                                        const Field* initial = nullptr) {
  detail::require_fredholm(p);
  const int N = g.size(), n = p.n;
  if (u.dim() != p.m || u.nodes() != N) throw ShapeError("solve_state: control does not match grid");
  StateResult res;
  Field phi = initial ? *initial : p.forcing_field(g);
  if (phi.dim() != n || phi.nodes() != N) throw ShapeError("solve_state: initial guess shape");
  auto target = [&](const Field&) { return opt.tol; };

  Field best = phi;
  double best_r = INFINITY, prev_r = INFINITY;
  int slow = 0;
  bool use_newton = false;
  for (int it = 0;; ++it) {
    Field rhs = state_rhs(p, g, phi, u);
    const double r = (rhs - phi).sup_norm();
    if (std::isfinite(r) && r < best_r) {
      best_r = r;
      best = phi;
    }
    if (r <= target(phi)) {
      res.state = phi;
      res.residual = r;
      res.picard_iterations = it;
      return res;
    }
    slow = (std::isfinite(r) && r > opt.stall_ratio * prev_r) ? slow + 1 : 0;
    if (!std::isfinite(r) || slow >= 3 || it >= opt.max_picard) {
      res.picard_iterations = it;
      use_newton = true;
      break;
    }
    prev_r = r;
    phi = (1 - opt.damping) * phi + opt.damping * rhs;
  }

  if (use_newton) {
    phi = best;
    double r = best_r;
    const Eigen::VectorXd w = expand_weights(g, n);
    for (int it = 0; it < opt.max_newton; ++it) {
      Field F = state_rhs(p, g, phi, u) - phi;
      r = F.sup_norm();
      if (r <= target(phi)) {
        res.state = phi;
        res.residual = r;
        res.newton_iterations = it;
        return res;
      }
      if (!std::isfinite(r)) break;
      Linearization L = linearize(p, g, phi, u);
      Mat J = Mat::Identity(N * n, N * n) - L.A.matrix() * w.asDiagonal();
      CheckedLU lu(J, "solve_state Newton step");
      Vec step = lu.solve(detail::flat(F.values()));
      phi.values() += Eigen::Map<const Mat>(step.data(), n, N);
    }
    throw ConvergenceError("solve_state: Picard stalled and Newton did not converge, residual " +
                               std::to_string(r),
                           r, res.picard_iterations + opt.max_newton);
  }
  throw ConvergenceError("solve_state: no convergence", best_r, res.picard_iterations);
}

inline Field solve_state(const Problem& p, const Control& u, const Grid& g,
                         const SolverOptions& opt = {}) {
  return solve_state_detailed(p, u, g, opt).state;
}

/// J = Σ w F1 + ½ ΣΣ w w F2, with F2 as given.
inline double cost(const Problem& p, const Grid& g, const Field& phi, const Control& u) {
  detail::check_fields(p, g, phi, u);
  return detail::running_cost(p, g, phi, u);
}

struct CostateResult {
  CoField costate;
  double residual = 0;
  double rcond = 1;
};

/// Solves ψ(x_l) = ∇φF1 + Σ_k w_k ∇φ1F̃2 + Σ_i w_i ψ_i A(i,l) as one dense
/// linear system.
inline CostateResult solve_costate_detailed(const Problem& p, const Grid& g, const Field& phi,
                                            const Control& u,
                                            const Linearization* lin = nullptr) {
  detail::require_fredholm(p);
  detail::check_fields(p, g, phi, u);
  const int N = g.size(), n = p.n;
  std::optional<Linearization> own;
  if (!lin) lin = &own.emplace(linearize(p, g, phi, u));
  Mat G = detail::cost_gradients(p, g, phi, u);
  Mat b(n, N);
  b = G.topRows(n);
  const Eigen::VectorXd w = expand_weights(g, n);
  Mat T = lin->A.matrix().transpose() * w.asDiagonal();
  Mat Sys = Mat::Identity(N * n, N * n) - T;
  CheckedLU lu(Sys, "solve_costate");
  Vec psi = lu.solve(detail::flat(b));
  CostateResult r;
  r.costate = CoField(Mat(Eigen::Map<const Mat>(psi.data(), n, N)));
  r.residual = (psi - T * psi - detail::flat(b)).cwiseAbs().maxCoeff();
  r.rcond = lu.rcond();
  return r;
}

inline CoField solve_costate(const Problem& p, const Grid& g, const Field& phi, const Control& u) {
  return solve_costate_detailed(p, g, phi, u).costate;
}

inline FredholmSolution solve(const Problem& p, const Control& u, const Grid& g,
                              const SolverOptions& opt = {}, const Field* initial = nullptr) {
  StateResult s = solve_state_detailed(p, u, g, opt, initial);
  FredholmSolution sol;
  sol.state = s.state;
  sol.control = u;
  sol.picard_iterations = s.picard_iterations;
  sol.newton_iterations = s.newton_iterations;
  sol.state_residual = s.residual;
  CostateResult c = solve_costate_detailed(p, g, s.state, u);
  sol.costate = c.costate;
  sol.costate_residual = c.residual;
  sol.cost = cost(p, g, s.state, u);
  return sol;
}

/// H(x_l, φ, φ(·), u, u(·), ψ(·)). The pointwise arguments default to the
/// node values φ_l, u_l.
inline double hamiltonian(const Problem& p, const Grid& g, int l, const Field& phi,
                          const Control& u, const CoField& psi,
                          const std::optional<Vec>& phi_at = std::nullopt,
                          const std::optional<Vec>& u_at = std::nullopt) {
  detail::check_fields(p, g, phi, u);
  const int N = g.size(), n = p.n, m = p.m;
  const Vec ph = phi_at ? *phi_at : Vec(phi.at(l));
  const Vec uu = u_at ? *u_at : Vec(u.at(l));
  Vec a1(n + m), a2(2 * n + 2 * m);
  a1 << ph, uu;
  a2.segment(0, n) = ph;
  a2.segment(2 * n, m) = uu;
  Points pt;
  pt[0] = g.node(l);
  double H = p.F1.is_zero() ? 0.0 : p.F1.scalar_value(pt, a1);
  for (int k = 0; k < N && !p.F2.is_zero(); ++k) {
    pt[1] = g.node(k);
    a2.segment(n, n) = phi.at(k);
    a2.segment(2 * n + m, m) = u.at(k);
    H += g.weight(k) * p.F2.scalar_value(pt, a2);
  }
  pt[1] = g.node(l);
  for (int i = 0; i < N; ++i) {
    pt[0] = g.node(i);
    const CoVec ps = psi.at(i).transpose();
    if (!p.f1.is_zero()) H += g.weight(i) * ps.dot(p.f1.value(pt, a1));
    if (p.f2.is_zero()) continue;
    for (int k = 0; k < N; ++k) {
      pt[2] = g.node(k);
      a2.segment(n, n) = phi.at(k);
      a2.segment(2 * n + m, m) = u.at(k);
      H += g.weight(i) * g.weight(k) * ps.dot(p.f2.value(pt, a2));
    }
  }
  return H;
}

/// h2(x_l, x_k, φ1, φ2, u1, u2, ψ) = F̃2 + Σ_i w_i ψ_i f̃2(x_i, x_l, x_k, ·).
inline double ancillary_h2(const Problem& p, const Grid& g, int l, int k, const Vec& phi1,
                           const Vec& phi2, const Vec& u1, const Vec& u2, const CoField& psi) {
  Vec a = Kernel::stack({phi1, phi2, u1, u2});
  Points pt{g.node(l), g.node(k), Point::Zero()};
  double h = p.F2.is_zero() ? 0.0 : p.F2.scalar_value(pt, a);
  if (p.f2.is_zero()) return h;
  pt[1] = g.node(l);
  pt[2] = g.node(k);
  for (int i = 0; i < g.size(); ++i) {
    pt[0] = g.node(i);
    h += g.weight(i) * psi.at(i).dot(p.f2.value(pt, a));
  }
  return h;
}

/// ∇_{u(x_l)} H at every node.
inline CoControl gradient(const Problem& p, const Grid& g, const Field& phi, const Control& u,
                          const CoField& psi, const Linearization* lin = nullptr) {
  detail::require_fredholm(p);
  detail::check_fields(p, g, phi, u);
  const int N = g.size(), n = p.n, m = p.m;
  std::optional<Linearization> own;
  if (!lin) lin = &own.emplace(linearize(p, g, phi, u));
  Mat G = detail::cost_gradients(p, g, phi, u).bottomRows(m);
  const Eigen::VectorXd w = expand_weights(g, n);
  Vec wpsi = w.cwiseProduct(detail::flat(psi.values()));
  Vec add = lin->B.matrix().transpose() * wpsi;
  G += Eigen::Map<const Mat>(add.data(), m, N);
  return CoControl(G);
}

inline CoControl gradient(const Problem& p, const Grid& g, const FredholmSolution& s) {
  return gradient(p, g, s.state, s.control, s.costate);
}

inline HessianBlocks hessian_blocks(const Problem& p, const Grid& g, const Field& phi,
                                    const Control& u, const CoField& psi) {
  detail::check_fields(p, g, phi, u);
  const int N = g.size(), n = p.n, m = p.m, q = n + m;
  HessianBlocks hb{std::vector<Mat>(static_cast<std::size_t>(N), Mat::Zero(q, q)),
                   BlockKernel(N, q, q)};
  const auto i1 = detail::pair_slot_indices(n, m, 0);
  const auto i2 = detail::pair_slot_indices(n, m, 1);
  Vec a1(q), a2(2 * q);
  Points pt;
  detail::add_cost_hessians(p, g, phi.values(), u.values(), hb.D, hb.X.matrix());
  for (int l = 0; l < N; ++l) {
    Mat& D = hb.D[static_cast<std::size_t>(l)];
    a1 << phi.at(l), u.at(l);
    a2.segment(0, n) = phi.at(l);
    a2.segment(2 * n, m) = u.at(l);
    pt[1] = g.node(l);
    for (int i = 0; i < N; ++i) {
      pt[0] = g.node(i);
      const CoVec ps = psi.at(i).transpose();
      if (ps.isZero(0)) continue;
      if (!p.f1.is_zero()) D += g.weight(i) * p.f1.hessian_contracted(pt, a1, ps);
      if (p.f2.is_zero()) continue;
      for (int k = 0; k < N; ++k) {
        pt[2] = g.node(k);
        a2.segment(n, n) = phi.at(k);
        a2.segment(2 * n + m, m) = u.at(k);
        Mat H = p.f2.hessian_contracted(pt, a2, ps);
        D += g.weight(i) * g.weight(k) * detail::take(H, i1, i1);
        hb.X.block(l, k) += g.weight(i) * detail::take(H, i1, i2);
      }
    }
  }
  return hb;
}

/// Solves δφ = ∫[A δφ + B δu] for the given linearization.
inline Field linearized_state(const Linearization& L, const Grid& g, const Control& du) {
  const int N = g.size(), n = L.A.rows(), m = L.B.cols();
  if (du.dim() != m || du.nodes() != N) throw ShapeError("linearized_state: control shape");
  const Eigen::VectorXd wn = expand_weights(g, n), wm = expand_weights(g, m);
  Mat Sys = Mat::Identity(N * n, N * n) - L.A.matrix() * wn.asDiagonal();
  CheckedLU lu(Sys, "linearized state");
  Vec rhs = L.B.matrix() * wm.cwiseProduct(detail::flat(du.values()));
  Vec x = lu.solve(rhs);
  return Field(Mat(Eigen::Map<const Mat>(x.data(), n, N)));
}

/// δ²J at a solution for the variation δu (and optional δ²u).
inline SecondVariationReport second_variation(const Problem& p, const Grid& g,
                                              const FredholmSolution& s, const Control& du,
                                              const std::optional<Control>& d2u = std::nullopt,
                                              const Linearization* lin = nullptr,
                                              const HessianBlocks* hb = nullptr) {
  const int N = g.size(), n = p.n, m = p.m, q = n + m;
  std::optional<Linearization> own_l;
  if (!lin) lin = &own_l.emplace(linearize(p, g, s.state, s.control));
  std::optional<HessianBlocks> own_h;
  if (!hb) hb = &own_h.emplace(hessian_blocks(p, g, s.state, s.control, s.costate));
  Field dphi = linearized_state(*lin, g, du);
  Mat d(q, N);
  d.topRows(n) = dphi.values();
  d.bottomRows(m) = du.values();
  SecondVariationReport r;
  for (int l = 0; l < N; ++l)
    r.pointwise += g.weight(l) * d.col(l).dot(hb->D[static_cast<std::size_t>(l)] * d.col(l));
  Vec wd = expand_weights(g, q).cwiseProduct(detail::flat(d));
  r.cross = wd.dot(hb->X.matrix() * wd);
  if (d2u) r.d2u_term = pair(gradient(p, g, s.state, s.control, s.costate, lin), *d2u, g);
  r.value = r.d2u_term + r.pointwise + r.cross;
  return r;
}

/// S = (I - A W)^{-1} A, so that S = A + ∫A S.
inline BlockKernel fredholm_resolvent(const BlockKernel& A, const Grid& g) {
  if (A.rows() != A.cols() || A.nodes() != g.size()) throw ShapeError("fredholm_resolvent: shape");
  const int N = g.size(), n = A.rows();
  const Eigen::VectorXd w = expand_weights(g, n);
  CheckedLU lu(Mat::Identity(N * n, N * n) - A.matrix() * w.asDiagonal(), "fredholm_resolvent");
  return BlockKernel(N, n, n, lu.solve(A.matrix()));
}

/// C = B + ∫S B and the reduced kernel K, returned as the form (R1, K).
inline QuadIntegralForm assemble_accessory(const AccessoryData& d, const Grid& g) {
  const int N = g.size(), n = d.A.rows(), m = d.B.cols();
  const Eigen::VectorXd wn = expand_weights(g, n);
  BlockKernel S = fredholm_resolvent(d.A, g);
  Mat C = d.B.matrix() + S.matrix() * wn.asDiagonal() * d.B.matrix();
  Mat WC = wn.asDiagonal() * C;
  Mat K = C.transpose() * block_diagonal(d.P1) * WC;
  Mat L1 = C.transpose() * block_diagonal(d.Q1);
  Mat L2 = WC.transpose() * d.Q2.matrix();
  K += L1 + L1.transpose();
  K += WC.transpose() * d.P2.matrix() * WC;
  K += L2 + L2.transpose();
  K += d.R2.matrix();
  QuadIntegralForm f;
  f.R1 = d.R1;
  f.K = BlockKernel(N, m, m, 0.5 * (K + K.transpose()));
  return f;
}

/// Accessory data of the second variation at a solution; its form equals δ²J.
inline AccessoryData accessory_from_solution(const Problem& p, const Grid& g,
                                             const FredholmSolution& s) {
  const int N = g.size(), n = p.n, m = p.m;
  Linearization L = linearize(p, g, s.state, s.control);
  HessianBlocks hb = hessian_blocks(p, g, s.state, s.control, s.costate);
  AccessoryData d;
  d.A = L.A;
  d.B = L.B;
  for (const auto& D : hb.D) {
    d.P1.push_back(D.topLeftCorner(n, n));
    d.Q1.push_back(D.topRightCorner(n, m));
    Mat R = D.bottomRightCorner(m, m);
    d.R1.push_back(0.5 * (R + R.transpose()));
  }
  d.P2 = BlockKernel(N, n, n);
  d.Q2 = BlockKernel(N, n, m);
  d.R2 = BlockKernel(N, m, m);
  for (int l = 0; l < N; ++l)
    for (int k = 0; k < N; ++k) {
      auto X = hb.X.block(l, k);
      d.P2.block(l, k) = X.topLeftCorner(n, n);
      d.Q2.block(l, k) = X.topRightCorner(n, m);
      d.R2.block(l, k) = X.bottomRightCorner(m, m);
    }
  return d;
}

/// Cost functional over controls, in the shape the optimizer expects.
/// Keeps the last state as a warm start, so one instance is not meant to be
/// shared between threads.
class Functional {
 public:
  Functional(Problem p, Grid g, SolverOptions opt = {})
      : p_(std::move(p)), g_(std::move(g)), opt_(opt) {
    detail::require_fredholm(p_);
  }

  const Grid& grid() const { return g_; }
  const Problem& problem() const { return p_; }

  FredholmSolution solve(const Control& u) const {
    FredholmSolution s = fredholm::solve(p_, u, g_, opt_, warm_ ? &*warm_ : nullptr);
    warm_ = s.state;
    return s;
  }
  double cost(const Control& u) const {
    StateResult s = solve_state_detailed(p_, u, g_, opt_, warm_ ? &*warm_ : nullptr);
    warm_ = s.state;
    return fredholm::cost(p_, g_, s.state, u);
  }
  CoControl gradient(const Control& u) const { return fredholm::gradient(p_, g_, solve(u)); }
  double second_variation(const Control& u, const Control& du) const {
    return fredholm::second_variation(p_, g_, solve(u), du).value;
  }
  Control zero_control() const { return Control(p_.m, g_.size()); }

 private:
  Problem p_;
  Grid g_;
  SolverOptions opt_;
  mutable std::optional<Field> warm_;
};

}  // namespace intocp::fredholm
