#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "intocp/errors.hpp"
#include "intocp/problem.hpp"
#include "intocp/quadrature.hpp"

namespace intocp::presets {

using Params = std::map<std::string, double>;

/// Defaults overridden by `given`; an unknown key is a configuration error.
inline Params resolve(const std::string& preset, const Params& defaults, const Params& given) {
  Params out = defaults;
  for (const auto& [k, v] : given) {
    if (!defaults.count(k))
      throw ConfigError("problem.params." + k, "unknown parameter for preset '" + preset + "'");
    out[k] = v;
  }
  return out;
}

namespace detail {

inline Kernel::HessianFn zero_hessian(int out, int dim) {
  return [out, dim](const Points&, const Vec&) {
    return std::vector<Mat>(static_cast<std::size_t>(out), Mat::Zero(dim, dim));
  };
}

inline Vec constant(double c) { return Vec::Constant(1, c); }

inline double dist2(const Point& a, const Point& b) { return (a - b).squaredNorm(); }

// Scalar kernels shared by the scalar presets. Argument order follows the
// problem layouts: f1 (φ, u), f2 (φ1, φ2, u1, u2), F1 (φ, u), F2 likewise.

/// f1 = λ·a(x,y)·φ + β·b(x,y)·u + α·sin φ.
inline Kernel scalar_f1(double lambda, double beta, double alpha,
                        std::function<double(const Point&, const Point&)> a = {},
                        std::function<double(const Point&, const Point&)> b = {}) {
  auto A = [a](const Points& p) { return a ? a(p[0], p[1]) : 1.0; };
  auto B = [b](const Points& p) { return b ? b(p[0], p[1]) : 1.0; };
  return Kernel(
      1, {1, 1},
      [=](const Points& p, const Vec& v) {
        return constant(lambda * A(p) * v(0) + beta * B(p) * v(1) + alpha * std::sin(v(0)));
      },
      [=](const Points& p, const Vec& v) {
        Mat J(1, 2);
        J << lambda * A(p) + alpha * std::cos(v(0)), beta * B(p);
        return J;
      },
      [=](const Points&, const Vec& v) {
        Mat H = Mat::Zero(2, 2);
        H(0, 0) = -alpha * std::sin(v(0));
        return std::vector<Mat>{H};
      });
}

/// f2 = κ φ1 φ2 + γ φ1 u2.
inline Kernel scalar_f2(double kappa, double gamma) {
  if (kappa == 0 && gamma == 0) return Kernel();
  return Kernel(
      1, {1, 1, 1, 1},
      [=](const Points&, const Vec& v) { return constant(kappa * v(0) * v(1) + gamma * v(0) * v(3)); },
      [=](const Points&, const Vec& v) {
        Mat J(1, 4);
        J << kappa * v(1) + gamma * v(3), kappa * v(0), 0, gamma * v(0);
        return J;
      },
      [=](const Points&, const Vec&) {
        Mat H = Mat::Zero(4, 4);
        H(0, 1) = H(1, 0) = kappa;
        H(0, 3) = H(3, 0) = gamma;
        return std::vector<Mat>{H};
      });
}

/// F1 = ½q(φ - φ̄)² + ½r u² + η φ u.
inline Kernel scalar_F1(double q, double target, double r, double eta) {
  return Kernel::scalar(
      {1, 1},
      [=](const Points&, const Vec& v) {
        const double e = v(0) - target;
        return 0.5 * q * e * e + 0.5 * r * v(1) * v(1) + eta * v(0) * v(1);
      },
      [=](const Points&, const Vec& v) {
        Vec g(2);
        g << q * (v(0) - target) + eta * v(1), r * v(1) + eta * v(0);
        return g;
      },
      [=](const Points&, const Vec&) {
        Mat H(2, 2);
        H << q, eta, eta, r;
        return H;
      });
}

/// F2 = μ φ1 φ2 u1 u2 + ν φ1 u2 + ρ c(x,z) u1 u2.
inline Kernel scalar_F2(double mu, double nu, double rho,
                        std::function<double(const Point&, const Point&)> c = {}) {
  if (mu == 0 && nu == 0 && rho == 0) return Kernel();
  auto C = [c](const Points& p) { return c ? c(p[0], p[1]) : 1.0; };
  return Kernel::scalar(
      {1, 1, 1, 1},
      [=](const Points& p, const Vec& v) {
        return mu * v(0) * v(1) * v(2) * v(3) + nu * v(0) * v(3) + rho * C(p) * v(2) * v(3);
      },
      [=](const Points& p, const Vec& v) {
        Vec g(4);
        g << mu * v(1) * v(2) * v(3) + nu * v(3), mu * v(0) * v(2) * v(3),
            mu * v(0) * v(1) * v(3) + rho * C(p) * v(3),
            mu * v(0) * v(1) * v(2) + nu * v(0) + rho * C(p) * v(2);
        return g;
      },
      [=](const Points& p, const Vec& v) {
        Mat H = Mat::Zero(4, 4);
        H(0, 1) = mu * v(2) * v(3);
        H(0, 2) = mu * v(1) * v(3);
        H(0, 3) = mu * v(1) * v(2) + nu;
        H(1, 2) = mu * v(0) * v(3);
        H(1, 3) = mu * v(0) * v(2);
        H(2, 3) = mu * v(0) * v(1) + rho * C(p);
        return Mat(H + H.transpose());
      });
}

/// F0 = ½ p |Y|².
inline Kernel terminal(int n, double p) {
  if (p == 0) return Kernel();
  return Kernel::scalar(
      {n}, [=](const Points&, const Vec& y) { return 0.5 * p * y.squaredNorm(); },
      [=](const Points&, const Vec& y) { return Vec(p * y); },
      [=](const Points&, const Vec&) { return Mat(p * Mat::Identity(n, n)); });
}

/// Two-state, one-control kernels used by the vector presets. `decay`
/// multiplies f1 and f2 by exp(-decay·|x - y|).
struct VectorKernels {
  Kernel f1, f2, F1, F2;
};

inline VectorKernels vector_kernels(const Params& P, double decay) {
  const double s = P.at("scale"), beta = P.at("beta"), c = P.at("c"), d = P.at("d");
  const double r = P.at("r"), e = P.at("e"), k = P.at("k"), k2 = P.at("k2");
  auto damp = [decay](const Points& p) { return std::exp(-decay * std::abs(p[0](0) - p[1](0))); };
  VectorKernels v;
  v.f1 = Kernel(
      2, {2, 1},
      [=](const Points& p, const Vec& a) {
        const double cx = std::cos(p[0](0) - p[1](0)), ex = std::exp(-dist2(p[0], p[1])), g = damp(p);
        Vec out(2);
        out << g * s * (cx * a(0) + 0.2 * a(1)) + beta * a(2) + c * std::sin(a(1)),
            g * s * (-0.1 * a(0) + ex * a(1)) + 0.5 * beta * a(2) + c * a(0) * a(2);
        return out;
      },
      [=](const Points& p, const Vec& a) {
        const double cx = std::cos(p[0](0) - p[1](0)), ex = std::exp(-dist2(p[0], p[1])), g = damp(p);
        Mat J(2, 3);
        J << g * s * cx, g * s * 0.2 + c * std::cos(a(1)), beta,
            -0.1 * g * s + c * a(2), g * s * ex, 0.5 * beta + c * a(0);
        return J;
      },
      [=](const Points&, const Vec& a) {
        Mat H0 = Mat::Zero(3, 3), H1 = Mat::Zero(3, 3);
        H0(1, 1) = -c * std::sin(a(1));
        H1(0, 2) = H1(2, 0) = c;
        return std::vector<Mat>{H0, H1};
      });
  // Slots (φ1, φ2, u1, u2): φ1 = a0,a1; φ2 = a2,a3; u1 = a4; u2 = a5.
  if (d != 0)
    v.f2 = Kernel(
        2, {2, 2, 1, 1},
        [=](const Points& p, const Vec& a) {
          const double g = damp(p);
          Vec out(2);
          out << g * d * a(0) * a(3), g * d * a(4) * a(2);
          return out;
        },
        [=](const Points& p, const Vec& a) {
          const double g = damp(p);
          Mat J = Mat::Zero(2, 6);
          J(0, 0) = g * d * a(3);
          J(0, 3) = g * d * a(0);
          J(1, 2) = g * d * a(4);
          J(1, 4) = g * d * a(2);
          return J;
        },
        [=](const Points& p, const Vec&) {
          const double g = damp(p);
          Mat H0 = Mat::Zero(6, 6), H1 = Mat::Zero(6, 6);
          H0(0, 3) = H0(3, 0) = g * d;
          H1(2, 4) = H1(4, 2) = g * d;
          return std::vector<Mat>{H0, H1};
        });
  v.F1 = Kernel::scalar(
      {2, 1},
      [=](const Points&, const Vec& a) {
        return 0.5 * (a(0) - 1) * (a(0) - 1) + 0.5 * a(1) * a(1) + 0.5 * r * a(2) * a(2) +
               e * a(0) * a(0) * a(2);
      },
      [=](const Points&, const Vec& a) {
        Vec g(3);
        g << a(0) - 1 + 2 * e * a(0) * a(2), a(1), r * a(2) + e * a(0) * a(0);
        return g;
      },
      [=](const Points&, const Vec& a) {
        Mat H(3, 3);
        H << 1 + 2 * e * a(2), 0, 2 * e * a(0), 0, 1, 0, 2 * e * a(0), 0, r;
        return H;
      });
  if (k != 0 || k2 != 0)
    v.F2 = Kernel::scalar(
        {2, 2, 1, 1},
        [=](const Points&, const Vec& a) { return k * a(0) * a(3) + k2 * a(4) * a(5); },
        [=](const Points&, const Vec& a) {
          Vec g = Vec::Zero(6);
          g(0) = k * a(3);
          g(3) = k * a(0);
          g(4) = k2 * a(5);
          g(5) = k2 * a(4);
          return g;
        },
        [=](const Points&, const Vec&) {
          Mat H = Mat::Zero(6, 6);
          H(0, 3) = H(3, 0) = k;
          H(4, 5) = H(5, 4) = k2;
          return H;
        });
  return v;
}

inline std::function<Vec(const Point&)> constant_forcing(double c) {
  return [c](const Point&) { return constant(c); };
}

}  // namespace detail

// ---------------------------------------------------------------- Fredholm

/// f1 = f2 = 0, F1 = ½u², φ0 ≡ phi0.
inline Problem fredholm_zero(const Params& given = {}) {
  Params P = resolve("fredholm-zero", {{"phi0", 1.0}}, given);
  ProblemDef d;
  d.forcing = detail::constant_forcing(P["phi0"]);
  d.F1 = detail::scalar_F1(0, 0, 1, 0);
  return make_problem(d);
}

/// f1 = λφ + βu, F1 = ½q(φ - φ̄)² + ½ru². With u ≡ 0 and |G| = 1 the state
/// is φ ≡ phi0 / (1 - λ).
inline Problem fredholm_linear(const Params& given = {}) {
  Params P = resolve("fredholm-linear",
                     {{"lambda", 0.5}, {"beta", 0.5}, {"q", 1.0}, {"target", 1.0}, {"r", 0.1}, {"phi0", 1.0}},
                     given);
  ProblemDef d;
  d.forcing = detail::constant_forcing(P["phi0"]);
  d.f1 = detail::scalar_f1(P["lambda"], P["beta"], 0);
  d.F1 = detail::scalar_F1(P["q"], P["target"], P["r"], 0);
  return make_problem(d);
}

/// Scalar problem with every kernel nontrivial:
///   f1 = λφ + β cos(π(x-y)) u + α sin φ,  f2 = κ φ1φ2 + γ φ1u2,
///   F1 = ½qφ² + ½ru² + ηφu,               F2 = μ φ1φ2u1u2 + ν φ1u2,
///   φ0(x) = phi0 + slope·x.
inline Problem fredholm_quadratic(const Params& given = {}) {
  Params P = resolve("fredholm-quadratic",
                     {{"lambda", 0.2}, {"beta", 1.0}, {"alpha", 0.1}, {"kappa", 0.15}, {"gamma", 0.3},
                      {"q", 1.0}, {"r", 0.5}, {"eta", 0.2}, {"mu", 0.1}, {"nu", 0.2},
                      {"phi0", 1.0}, {"slope", 0.5}},
                     given);
  ProblemDef d;
  const double phi0 = P["phi0"], slope = P["slope"];
  d.forcing = [=](const Point& x) { return detail::constant(phi0 + slope * x(0)); };
  d.f1 = detail::scalar_f1(P["lambda"], P["beta"], P["alpha"], {},
                           [](const Point& x, const Point& y) { return std::cos(M_PI * (x(0) - y(0))); });
  d.f2 = detail::scalar_f2(P["kappa"], P["gamma"]);
  d.F1 = detail::scalar_F1(P["q"], 0, P["r"], P["eta"]);
  d.F2 = detail::scalar_F2(P["mu"], P["nu"], 0);
  return make_problem(d);
}

/// Two states, one control, nonlinear in both kernels; φ0(x) = (1, x).
inline Problem fredholm_vector(const Params& given = {}) {
  Params P = resolve("fredholm-vector",
                     {{"scale", 0.3}, {"beta", 0.5}, {"c", 0.1}, {"d", 0.1}, {"r", 0.5},
                      {"e", 0.05}, {"k", 0.1}, {"k2", 0.05}},
                     given);
  ProblemDef d;
  d.n = 2;
  d.forcing = [](const Point& x) { return Vec(Eigen::Vector2d(1.0, x(0))); };
  auto v = detail::vector_kernels(P, 0.0);
  d.f1 = v.f1;
  d.f2 = v.f2;
  d.F1 = v.F1;
  d.F2 = v.F2;
  return make_problem(d);
}

/// Scalar problem on a two-dimensional domain:
///   f1 = λ exp(-|x-y|²) φ + βu + α sin φ,  F1 = ½φ² + ½ru²,
///   F2 = ρ exp(-|x-z|²) u1u2.
inline Problem fredholm_box(const Params& given = {}) {
  Params P = resolve("fredholm-box",
                     {{"lambda", 0.4}, {"beta", 0.5}, {"alpha", 0.1}, {"rho", 0.1}, {"r", 1.0}, {"phi0", 1.0}},
                     given);
  ProblemDef d;
  d.forcing = detail::constant_forcing(P["phi0"]);
  auto gauss = [](const Point& a, const Point& b) { return std::exp(-detail::dist2(a, b)); };
  d.f1 = detail::scalar_f1(P["lambda"], P["beta"], P["alpha"], gauss);
  d.F1 = detail::scalar_F1(1, 0, P["r"], 0);
  d.F2 = detail::scalar_F2(0, 0, P["rho"], gauss);
  return make_problem(d);
}

/// Linear-quadratic problem with ∇uuH ≡ 1:
///   f1 = λ cos(π(x-y)/2) φ + βu,  F1 = ½q(φ - φ̄)² + ½u²,  F2 = ρ φ1φ2.
inline Problem fredholm_lq(const Params& given = {}) {
  Params P = resolve("fredholm-lq",
                     {{"lambda", 0.3}, {"beta", 0.5}, {"q", 1.0}, {"target", 1.0}, {"rho", 0.2}, {"phi0", 0.5}},
                     given);
  ProblemDef d;
  d.forcing = detail::constant_forcing(P["phi0"]);
  d.f1 = detail::scalar_f1(P["lambda"], P["beta"], 0,
                           [](const Point& x, const Point& y) { return std::cos(0.5 * M_PI * (x(0) - y(0))); });
  d.F1 = detail::scalar_F1(P["q"], P["target"], 1, 0);
  const double rho = P["rho"];
  if (rho != 0)
    d.F2 = Kernel::scalar(
        {1, 1, 1, 1}, [=](const Points&, const Vec& v) { return rho * v(0) * v(1); },
        [=](const Points&, const Vec& v) {
          Vec g = Vec::Zero(4);
          g(0) = rho * v(1);
          g(1) = rho * v(0);
          return g;
        },
        [=](const Points&, const Vec&) {
          Mat H = Mat::Zero(4, 4);
          H(0, 1) = H(1, 0) = rho;
          return H;
        });
  return make_problem(d);
}

// ---------------------------------------------------------------- Volterra

/// f1 = f2 = 0, F1 = ½u², y0 ≡ y0.
inline Problem volterra_zero(const Params& given = {}) {
  Params P = resolve("volterra-zero", {{"y0", 1.0}}, given);
  ProblemDef d;
  d.family = Family::volterra;
  d.forcing = detail::constant_forcing(P["y0"]);
  d.F1 = detail::scalar_F1(0, 0, 1, 0);
  return make_problem(d);
}

/// f1 = a y + βu, F1 = ½q(y - ȳ)² + ½ru², F0 = ½p Y². With u ≡ 0 the
/// state is y0·e^{at}.
inline Problem volterra_exp(const Params& given = {}) {
  Params P = resolve("volterra-exp",
                     {{"a", 1.0}, {"beta", 0.5}, {"q", 1.0}, {"target", 0.0}, {"r", 0.5}, {"p", 0.5},
                      {"y0", 1.0}},
                     given);
  ProblemDef d;
  d.family = Family::volterra;
  d.forcing = detail::constant_forcing(P["y0"]);
  d.f1 = detail::scalar_f1(P["a"], P["beta"], 0);
  d.F1 = detail::scalar_F1(P["q"], P["target"], P["r"], 0);
  d.F0 = detail::terminal(1, P["p"]);
  return make_problem(d);
}

/// f1 = a y + βu, f2 = κ y1y2 + γ y1u2, F1 = ½qy² + ½ru², F2 = ν y1u2,
/// F0 = ½p Y². For constant u ≡ c, m(t) = ∫_0^t y solves
/// m' = y0 + a m + βct + ½κm² + ½γ c t m.
inline Problem volterra_double(const Params& given = {}) {
  Params P = resolve("volterra-double",
                     {{"a", 0.0}, {"beta", 0.5}, {"kappa", 1.0}, {"gamma", 0.3}, {"q", 1.0}, {"r", 0.5},
                      {"nu", 0.2}, {"p", 0.5}, {"y0", 1.0}},
                     given);
  ProblemDef d;
  d.family = Family::volterra;
  d.forcing = detail::constant_forcing(P["y0"]);
  d.f1 = detail::scalar_f1(P["a"], P["beta"], 0);
  d.f2 = detail::scalar_f2(P["kappa"], P["gamma"]);
  d.F1 = detail::scalar_F1(P["q"], 0, P["r"], 0);
  d.F2 = detail::scalar_F2(0, P["nu"], 0);
  d.F0 = detail::terminal(1, P["p"]);
  return make_problem(d);
}

/// Two states, one control, memory decaying like exp(-(t-s)); y0 = (1, 0).
inline Problem volterra_nonlinear(const Params& given = {}) {
  Params P = resolve("volterra-nonlinear",
                     {{"scale", 0.5}, {"beta", 0.5}, {"c", 0.2}, {"d", 0.2}, {"r", 0.5},
                      {"e", 0.05}, {"k", 0.1}, {"k2", 0.05}, {"p", 0.5}},
                     given);
  ProblemDef d;
  d.family = Family::volterra;
  d.n = 2;
  d.forcing = [](const Point&) { return Vec(Eigen::Vector2d(1.0, 0.0)); };
  auto v = detail::vector_kernels(P, 1.0);
  d.f1 = v.f1;
  d.f2 = v.f2;
  d.F1 = v.F1;
  d.F2 = v.F2;
  d.F0 = detail::terminal(2, P["p"]);
  return make_problem(d);
}

/// Linear-quadratic Volterra problem with ∇uuH ≡ 1:
///   f1 = a e^{-(t-s)} y + βu,  F1 = ½q(y - ȳ)² + ½u²,  F0 = ½p Y².
inline Problem volterra_lq(const Params& given = {}) {
  Params P = resolve("volterra-lq",
                     {{"a", 0.5}, {"beta", 1.0}, {"q", 1.0}, {"target", 1.0}, {"p", 1.0}, {"y0", 0.0}},
                     given);
  ProblemDef d;
  d.family = Family::volterra;
  d.forcing = detail::constant_forcing(P["y0"]);
  d.f1 = detail::scalar_f1(P["a"], P["beta"], 0,
                           [](const Point& t, const Point& s) { return std::exp(-(t(0) - s(0))); });
  d.F1 = detail::scalar_F1(P["q"], P["target"], 1, 0);
  d.F0 = detail::terminal(1, P["p"]);
  return make_problem(d);
}

// ---------------------------------------------------------------- catalog

/// Default grid of a preset: an interval [0, T] or a box.
struct GridSpec {
  double T = 1.0;
  std::vector<std::pair<double, double>> bounds;
  int N = 32;

  Grid build() const {
    if (bounds.empty()) return Grid::interval(T, N);
    return Grid::box(bounds, std::vector<int>(bounds.size(), N));
  }
};

struct Entry {
  std::string name;
  Family family;
  std::function<Problem(const Params&)> build;
  GridSpec grid;
  std::string summary;
};

inline const std::vector<Entry>& catalog() {
  static const std::vector<Entry> entries{
      {"fredholm-zero", Family::fredholm, fredholm_zero, {}, "no dynamics, F1 = u^2/2"},
      {"fredholm-linear", Family::fredholm, fredholm_linear, {}, "constant kernel lambda*phi + beta*u"},
      {"fredholm-quadratic", Family::fredholm, fredholm_quadratic, {}, "scalar, all kernels nontrivial"},
      {"fredholm-vector", Family::fredholm, fredholm_vector, {}, "two states, one control"},
      {"fredholm-box", Family::fredholm, fredholm_box, {1.0, {{0, 1}, {0, 1}}, 8}, "unit square domain"},
      {"fredholm-lq", Family::fredholm, fredholm_lq, {}, "linear-quadratic, R1 = 1"},
      {"volterra-zero", Family::volterra, volterra_zero, {}, "no dynamics, F1 = u^2/2"},
      {"volterra-exp", Family::volterra, volterra_exp, {}, "f1 = a*y + beta*u"},
      {"volterra-double", Family::volterra, volterra_double, {}, "double term kappa*y1*y2 + gamma*y1*u2"},
      {"volterra-nonlinear", Family::volterra, volterra_nonlinear, {}, "two states, fading memory"},
      {"volterra-lq", Family::volterra, volterra_lq, {}, "linear-quadratic, R1 = 1"},
  };
  return entries;
}

inline const Entry* find(const std::string& name) {
  for (const auto& e : catalog())
    if (e.name == name) return &e;
  return nullptr;
}

}  // namespace intocp::presets
