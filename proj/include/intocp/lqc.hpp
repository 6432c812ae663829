#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "intocp/errors.hpp"
#include "intocp/fields.hpp"
#include "intocp/fredholm.hpp"
#include "intocp/presets.hpp"
#include "intocp/problem.hpp"
#include "intocp/quadform.hpp"
#include "intocp/quadrature.hpp"

namespace intocp::lqc {

/// (x; φ(x)) -> matrix.
using PointFn = std::function<Mat(const Point&, const Vec&)>;
/// (x, y; φ(y)) -> matrix.
using DynFn = std::function<Mat(const Point&, const Point&, const Vec&)>;
/// (x, y, z; φ(y), φ(z)) -> matrix.
using DynPairFn = std::function<Mat(const Point&, const Point&, const Point&, const Vec&, const Vec&)>;
/// (x, z; φ(x), φ(z)) -> matrix.
using CostPairFn = std::function<Mat(const Point&, const Point&, const Vec&, const Vec&)>;

/// Fredholm system affine in the control with a cost quadratic in it:
///   φ = φ0 + ∫[f0 + f1 u(y)]dy + ½∫∫[g0 + g1 u(y)]dz dy
///   J = ∫[F0 + F1 u + ½uᵀF2u] + ½∫∫[F3 + F4 u(x) + ½u(x)ᵀF5 u(x) + ½u(x)ᵀF6 u(z)]
/// Shapes: f0, g0 n x 1; f1, g1 n x m; F0, F3 1 x 1; F1, F4 1 x m; F2, F5, F6
/// m x m. An empty function is zero.
struct LqcProblem {
  int n = 1;
  int m = 1;
  std::function<Vec(const Point&)> phi0;
  DynFn f0, f1;
  DynPairFn g0, g1;
  PointFn F0, F1, F2;
  CostPairFn F3, F4, F5, F6;
};

struct LqcOptions {
  /// Stop when successive controls differ by at most this in sup norm.
  double tol = 1e-10;
  /// u ← (1-ω)u + ω u_new.
  double relaxation = 1.0;
  int max_outer = 200;
  fredholm::SolverOptions state;
};

struct LqcSolution {
  Field state;
  CoField costate;
  Control control;
  double cost = 0;
  /// Sup norm of ∇uH at the returned triple.
  double stationarity_residual = 0;
  int outer_iterations = 0;
};

namespace detail {

inline Mat eval(const PointFn& f, int r, int c, const Point& x, const Vec& a) {
  return f ? f(x, a) : Mat::Zero(r, c);
}
inline Mat eval(const DynFn& f, int r, int c, const Point& x, const Point& y, const Vec& a) {
  return f ? f(x, y, a) : Mat::Zero(r, c);
}
inline Mat eval(const DynPairFn& f, int r, int c, const Point& x, const Point& y, const Point& z,
                const Vec& a, const Vec& b) {
  return f ? f(x, y, z, a, b) : Mat::Zero(r, c);
}
inline Mat eval(const CostPairFn& f, int r, int c, const Point& x, const Point& z, const Vec& a,
                const Vec& b) {
  return f ? f(x, z, a, b) : Mat::Zero(r, c);
}

inline Mat sym(const Mat& M) { return 0.5 * (M + M.transpose()); }

/// ∇uH = c + M u over all nodes, u stacked node by node. Double integrands
/// enter symmetrized, as in the generic pipeline.
struct System {
  Mat M;
  Vec c;
};

inline System stationarity_system(const LqcProblem& lp, const Grid& g, const Field& phi,
                                  const CoField& psi) {
  const int N = g.size(), n = lp.n, m = lp.m;
  System s{Mat::Zero(N * m, N * m), Vec::Zero(N * m)};
  for (int l = 0; l < N; ++l) {
    const Point& xl = g.node(l);
    const Vec pl = phi.at(l);
    auto c = s.c.segment(l * m, m);
    auto D = s.M.block(l * m, l * m, m, m);
    c += eval(lp.F1, 1, m, xl, pl).transpose();
    D += sym(eval(lp.F2, m, m, xl, pl));
    for (int k = 0; k < N; ++k) {
      const Point& xk = g.node(k);
      const Vec pk = phi.at(k);
      const double wk = g.weight(k);
      c += 0.5 * wk * eval(lp.F4, 1, m, xl, xk, pl, pk).transpose();
      D += 0.5 * wk * sym(eval(lp.F5, m, m, xl, xk, pl, pk));
      if (lp.F6)
        s.M.block(l * m, k * m, m, m) +=
            0.25 * wk * (lp.F6(xl, xk, pl, pk) + lp.F6(xk, xl, pk, pl).transpose());
    }
    for (int i = 0; i < N; ++i) {
      const Point& xi = g.node(i);
      const double wi = g.weight(i);
      const Vec ps = psi.at(i);
      if (lp.f1) c += wi * lp.f1(xi, xl, pl).transpose() * ps;
      if (!lp.g1) continue;
      for (int k = 0; k < N; ++k)
        c += 0.5 * wi * g.weight(k) * lp.g1(xi, xl, g.node(k), pl, phi.at(k)).transpose() * ps;
    }
  }
  return s;
}

}  // namespace detail

/// The same problem in the generic kernel form; derivatives come from
/// finite differences.
inline Problem to_problem(const LqcProblem& lp) {
  const int n = lp.n, m = lp.m;
  ProblemDef d;
  d.family = Family::fredholm;
  d.n = n;
  d.m = m;
  d.forcing = lp.phi0;
  if (lp.f0 || lp.f1)
    d.f1 = Kernel(n, {n, m}, [lp, n, m](const Points& p, const Vec& a) -> Vec {
      Vec phi = a.head(n), u = a.tail(m);
      return detail::eval(lp.f0, n, 1, p[0], p[1], phi) + detail::eval(lp.f1, n, m, p[0], p[1], phi) * u;
    });
  if (lp.g0 || lp.g1)
    d.f2 = Kernel(n, {n, n, m, m}, [lp, n, m](const Points& p, const Vec& a) -> Vec {
      Vec p1 = a.segment(0, n), p2 = a.segment(n, n), u1 = a.segment(2 * n, m);
      return detail::eval(lp.g0, n, 1, p[0], p[1], p[2], p1, p2) +
             detail::eval(lp.g1, n, m, p[0], p[1], p[2], p1, p2) * u1;
    });
  if (lp.F0 || lp.F1 || lp.F2)
    d.F1 = Kernel::scalar({n, m}, [lp, n, m](const Points& p, const Vec& a) {
      Vec phi = a.head(n), u = a.tail(m);
      return detail::eval(lp.F0, 1, 1, p[0], phi)(0, 0) + (detail::eval(lp.F1, 1, m, p[0], phi) * u)(0) +
             0.5 * u.dot(detail::eval(lp.F2, m, m, p[0], phi) * u);
    });
  if (lp.F3 || lp.F4 || lp.F5 || lp.F6)
    d.F2 = Kernel::scalar({n, n, m, m}, [lp, n, m](const Points& p, const Vec& a) {
      Vec p1 = a.segment(0, n), p2 = a.segment(n, n), u1 = a.segment(2 * n, m), u2 = a.segment(2 * n + m, m);
      const Point &x = p[0], &z = p[1];
      return detail::eval(lp.F3, 1, 1, x, z, p1, p2)(0, 0) + (detail::eval(lp.F4, 1, m, x, z, p1, p2) * u1)(0) +
             0.5 * u1.dot(detail::eval(lp.F5, m, m, x, z, p1, p2) * u1) +
             0.5 * u1.dot(detail::eval(lp.F6, m, m, x, z, p1, p2) * u2);
    });
  return make_problem(d);
}

/// ∇uH at every node for the given (φ, ψ, u).
inline CoControl stationarity_gradient(const LqcProblem& lp, const Grid& g, const Field& phi,
                                       const CoField& psi, const Control& u) {
  auto s = detail::stationarity_system(lp, g, phi, psi);
  Eigen::Map<const Vec> uv(u.values().data(), u.values().size());
  Vec r = s.c + s.M * uv;
  return CoControl(Eigen::Map<const Mat>(r.data(), lp.m, g.size()));
}

/// Solves ∇uH = 0 for the control at fixed (φ, ψ) as one linear system in
/// all node values.
inline Control solve_stationarity(const LqcProblem& lp, const Grid& g, const Field& phi,
                                  const CoField& psi) {
  auto s = detail::stationarity_system(lp, g, phi, psi);
  CheckedLU lu(s.M, "lqc solve_stationarity: control operator");
  Vec u = lu.solve(-s.c);
  return Control(Eigen::Map<const Mat>(u.data(), lp.m, g.size()));
}

/// Alternates state solve, costate solve and stationarity solve until the
/// control settles.
inline LqcSolution solve_lqc(const LqcProblem& lp, const Grid& g, const LqcOptions& opt = {}) {
  const Problem p = to_problem(lp);
  Control u(lp.m, g.size());
  std::optional<Field> warm;
  LqcSolution sol;
  double change = INFINITY;
  for (int it = 1; it <= opt.max_outer; ++it) {
    auto st = fredholm::solve_state_detailed(p, u, g, opt.state, warm ? &*warm : nullptr);
    warm = st.state;
    CoField psi = fredholm::solve_costate(p, g, st.state, u);
    Control next = solve_stationarity(lp, g, st.state, psi);
    change = (next - u).sup_norm();
    u = (1 - opt.relaxation) * u + opt.relaxation * next;
    sol.outer_iterations = it;
    if (change <= opt.tol) break;
  }
  if (!(change <= opt.tol))
    throw ConvergenceError("solve_lqc: control did not settle after " + std::to_string(opt.max_outer) +
                               " outer iterations, last change " + std::to_string(change),
                           change, opt.max_outer);
  sol.control = u;
  sol.state = fredholm::solve_state_detailed(p, u, g, opt.state, warm ? &*warm : nullptr).state;
  sol.costate = fredholm::solve_costate(p, g, sol.state, u);
  sol.cost = fredholm::cost(p, g, sol.state, u);
  sol.stationarity_residual = stationarity_gradient(lp, g, sol.state, sol.costate, u).sup_norm();
  return sol;
}

// ---------------------------------------------------------------- presets

/// No dynamics, F0 = ½qφ², F2 = r.
inline LqcProblem decoupled(const presets::Params& given = {}) {
  auto P = presets::resolve("lqc-decoupled", {{"q", 1.0}, {"r", 1.0}, {"phi0", 0.5}}, given);
  LqcProblem lp;
  lp.phi0 = [c = P["phi0"]](const Point&) { return Vec::Constant(1, c); };
  lp.F0 = [q = P["q"]](const Point&, const Vec& f) { return Mat::Constant(1, 1, 0.5 * q * f(0) * f(0)); };
  lp.F2 = [r = P["r"]](const Point&, const Vec&) { return Mat::Constant(1, 1, r); };
  return lp;
}

/// Linear dynamics f0 = λcos(π(x-y)/2)φ, f1 = β; cost ½q(φ - φ̄)² + ½ru².
inline LqcProblem linear_quadratic(const presets::Params& given = {}) {
  auto P = presets::resolve("lqc-lq",
                            {{"lambda", 0.3}, {"beta", 0.3}, {"q", 1.0}, {"target", 1.0}, {"r", 1.0},
                             {"phi0", 0.5}},
                            given);
  LqcProblem lp;
  lp.phi0 = [c = P["phi0"]](const Point&) { return Vec::Constant(1, c); };
  lp.f0 = [l = P["lambda"]](const Point& x, const Point& y, const Vec& f) {
    return Mat::Constant(1, 1, l * std::cos(M_PI * (x(0) - y(0)) / 2) * f(0));
  };
  lp.f1 = [b = P["beta"]](const Point&, const Point&, const Vec&) { return Mat::Constant(1, 1, b); };
  lp.F0 = [q = P["q"], t = P["target"]](const Point&, const Vec& f) {
    return Mat::Constant(1, 1, 0.5 * q * (f(0) - t) * (f(0) - t));
  };
  lp.F2 = [r = P["r"]](const Point&, const Vec&) { return Mat::Constant(1, 1, r); };
  return lp;
}

/// Nonlinear in the state with every block present, including the F6
/// coupling of u(x) and u(z).
inline LqcProblem coupled(const presets::Params& given = {}) {
  auto P = presets::resolve("lqc-coupled",
                            {{"lambda", 0.3}, {"beta", 0.3}, {"kappa", 0.1}, {"gamma", 0.1}, {"q", 1.0},
                             {"target", 1.0}, {"eta", 0.1}, {"r", 1.0}, {"mu", 0.1}, {"nu", 0.1},
                             {"rho", 0.2}, {"sigma", 0.3}, {"phi0", 0.5}},
                            given);
  LqcProblem lp;
  lp.phi0 = [c = P["phi0"]](const Point& x) { return Vec::Constant(1, c * (1 + 0.5 * x(0))); };
  lp.f0 = [l = P["lambda"]](const Point& x, const Point& y, const Vec& f) {
    return Mat::Constant(1, 1, l * std::cos(x(0) - y(0)) * f(0) + 0.1 * std::sin(f(0)));
  };
  lp.f1 = [b = P["beta"]](const Point&, const Point& y, const Vec& f) {
    return Mat::Constant(1, 1, b * (1 + 0.2 * y(0)) * (1 + 0.1 * std::cos(f(0))));
  };
  lp.g0 = [k = P["kappa"]](const Point&, const Point&, const Point&, const Vec& a, const Vec& b) {
    return Mat::Constant(1, 1, k * a(0) * b(0));
  };
  lp.g1 = [c = P["gamma"]](const Point& x, const Point&, const Point&, const Vec&, const Vec& b) {
    return Mat::Constant(1, 1, c * (1 + x(0)) * b(0));
  };
  lp.F0 = [q = P["q"], t = P["target"]](const Point&, const Vec& f) {
    return Mat::Constant(1, 1, 0.5 * q * (f(0) - t) * (f(0) - t));
  };
  lp.F1 = [e = P["eta"]](const Point&, const Vec& f) { return Mat::Constant(1, 1, e * f(0)); };
  lp.F2 = [r = P["r"]](const Point&, const Vec& f) { return Mat::Constant(1, 1, r * (1 + 0.1 * f(0) * f(0))); };
  lp.F3 = [mu = P["mu"]](const Point&, const Point&, const Vec& a, const Vec& b) {
    return Mat::Constant(1, 1, mu * a(0) * b(0));
  };
  lp.F4 = [nu = P["nu"]](const Point&, const Point&, const Vec&, const Vec& b) {
    return Mat::Constant(1, 1, nu * b(0));
  };
  lp.F5 = [rho = P["rho"]](const Point&, const Point&, const Vec&, const Vec&) {
    return Mat::Constant(1, 1, rho);
  };
  lp.F6 = [s = P["sigma"]](const Point& x, const Point& z, const Vec&, const Vec&) {
    return Mat::Constant(1, 1, s * std::exp(-std::abs(x(0) - z(0))));
  };
  return lp;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"lqc-decoupled", "lqc-lq", "lqc-coupled"};
  return names;
}

inline LqcProblem preset(const std::string& name, const presets::Params& given = {}) {
  if (name == "lqc-decoupled") return decoupled(given);
  if (name == "lqc-lq") return linear_quadratic(given);
  if (name == "lqc-coupled") return coupled(given);
  throw ConfigError("problem.preset", "unknown lqc preset '" + name + "'");
}

}  // namespace intocp::lqc
