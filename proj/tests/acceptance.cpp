// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Reference values come from independent oracles below or
// in support/oracles.hpp.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "intocp/bilinear.hpp"
#include "intocp/fredholm.hpp"
#include "intocp/lqc.hpp"
#include "intocp/multiarray.hpp"
#include "intocp/optimizer.hpp"
#include "intocp/presets.hpp"
#include "intocp/volterra.hpp"
#include "support/oracles.hpp"

using namespace intocp;
namespace fh = intocp::fredholm;
namespace vt = intocp::volterra;
namespace bc = intocp::bilinear_control;

namespace {

struct Check {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& why) {
    if (!ok) {
      pass = false;
      std::printf("    failed: %s\n", why.c_str());
    }
  }
};

std::string sci(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2e", v);
  return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double l2sq(const Control& U, const Grid& g) {
  double s = 0;
  for (int i = 0; i < g.size(); ++i) s += g.weight(i) * U.at(i).squaredNorm();
  return s;
}

Problem preset(const std::string& name, const presets::Params& P = {}) {
  return presets::find(name)->build(P);
}

// Second variation at a fixed base point with the blocks built once.
struct SecondVariation {
  std::function<double(const Control&)> at;
};

SecondVariation second_variation_at(const Problem& p, const Grid& g, const Control& u) {
  if (p.family == Family::fredholm) {
    auto s = std::make_shared<fh::FredholmSolution>(fh::solve(p, u, g));
    auto L = std::make_shared<fh::Linearization>(fh::linearize(p, g, s->state, u));
    auto hb = std::make_shared<fh::HessianBlocks>(fh::hessian_blocks(p, g, s->state, u, s->costate));
    return {[=, &p, &g](const Control& du) {
      return fh::second_variation(p, g, *s, du, std::nullopt, L.get(), hb.get()).value;
    }};
  }
  auto s = std::make_shared<vt::VolterraSolution>(vt::solve(p, u, g));
  auto L = std::make_shared<vt::Linearization>(vt::linearize(p, g, s->state, u));
  auto hb = std::make_shared<vt::HessianBlocks>(
      vt::hessian_blocks(p, g, s->state, u, s->costate, s->omega));
  return {[=, &p, &g](const Control& du) {
    return vt::second_variation(p, g, *s, du, std::nullopt, L.get(), hb.get()).value;
  }};
}

const std::vector<std::string> kDerivativePresets{
    "fredholm-linear", "fredholm-quadratic", "fredholm-vector", "fredholm-lq",
    "volterra-exp",    "volterra-double",    "volterra-nonlinear", "volterra-lq"};

// ------------------------------------------------------------------ 1, 2

template <class F>
void derivative_checks(const F& J, const Problem& p, bool second, double& worst, Check& v,
                       const std::string& name) {
  const Grid& g = J.grid();
  std::mt19937_64 rng(1000 + name.size());
  Control u = 0.5 * oracle::random_direction(g, p.m, rng);
  std::vector<Control> dirs;
  for (int k = 0; k < 5; ++k) dirs.push_back(oracle::random_direction(g, p.m, rng));
  if (!second) {
    CoControl grad = J.gradient(u);
    for (const auto& du : dirs) {
      const double a = pair(grad, du, g), fd = fd_gradient(J, u, du, 1e-5);
      const double e = oracle::rel_err(a, fd);
      worst = std::max(worst, e);
      v.require(e <= 1e-4, name + " slope " + sci(a) + " vs " + sci(fd));
    }
    return;
  }
  SecondVariation sv = second_variation_at(p, g, u);
  for (const auto& du : dirs) {
    const double a = sv.at(du), fd = fd_second(J, u, du, 1e-3);
    const double e = oracle::rel_err(a, fd);
    worst = std::max(worst, e);
    v.require(e <= 1e-3, name + " curvature " + sci(a) + " vs " + sci(fd));
  }
}

void derivative_fidelity(Check& v, bool second) {
  double worst = 0, slowest = 0;
  int fredholm = 0, volterra = 0;
  bool has_f2 = false;
  for (const auto& name : kDerivativePresets) {
    Problem p = preset(name);
    Grid g = Grid::interval(1.0, 64);
    auto t0 = std::chrono::steady_clock::now();
    if (p.family == Family::fredholm) {
      derivative_checks(fh::Functional(p, g), p, second, worst, v, name);
      ++fredholm;
    } else {
      derivative_checks(vt::Functional(p, g), p, second, worst, v, name);
      ++volterra;
    }
    has_f2 = has_f2 || !p.f2.is_zero();
    const double dt = seconds_since(t0);
    slowest = std::max(slowest, dt);
    if (!second) v.require(dt <= 30.0, name + " took " + sci(dt) + " s");
  }
  v.require(fredholm >= 3 && volterra >= 3 && has_f2, "preset coverage");
  v.detail << kDerivativePresets.size() << " presets x 5 directions at N=64, worst rel " << sci(worst)
           << ", slowest preset " << sci(slowest) << " s";
}

// ------------------------------------------------------------------ 3

/// RK4 for m' = y0 + a m + βct + ½κm² + ½γ c t m; returns y = m' at t.
double double_term_oracle(double t, double c, double a, double beta, double kappa, double gamma,
                          double y0) {
  auto rhs = [&](double s, double m) {
    return y0 + a * m + beta * c * s + 0.5 * kappa * m * m + 0.5 * gamma * c * s * m;
  };
  const int steps = 20000;
  const double h = t / steps;
  double m = 0, s = 0;
  for (int k = 0; k < steps; ++k, s += h) {
    const double k1 = rhs(s, m), k2 = rhs(s + h / 2, m + h / 2 * k1);
    const double k3 = rhs(s + h / 2, m + h / 2 * k2), k4 = rhs(s + h, m + h * k3);
    m += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return rhs(t, m);
}

void closed_form_states(Check& v) {
  {
    Problem p = preset("volterra-exp", {{"a", 1.0}, {"beta", 0.0}});
    Grid g = Grid::interval(1.0, 256);
    const double y1 = vt::solve_state(p, Control(1, g.size()), g).at(g.last())(0);
    const double e = std::abs(y1 - std::exp(1.0));
    v.require(e <= 1e-4, "exponential: |y(1) - e| = " + sci(e));
    v.detail << "exp " << sci(e);
  }
  {
    double worst = 0;
    Grid g = Grid::interval(1.0, 16);
    for (double lam : {0.5, 0.25, -0.5, 0.8}) {
      Problem p = preset("fredholm-linear", {{"lambda", lam}, {"beta", 0.0}});
      Field phi = fh::solve_state(p, Control(1, g.size()), g);
      for (int i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(phi.at(i)(0) - 1 / (1 - lam)));
    }
    v.require(worst <= 1e-10, "constant kernel: " + sci(worst));
    v.detail << ", constant kernel " << sci(worst);
  }
  {
    const double a = 0, beta = 0.5, kappa = 1, gamma = 0.3, y0 = 1;
    Problem p = preset("volterra-double");
    Grid g = Grid::interval(1.0, 256);
    double worst = 0;
    for (double c : {0.0, 0.3, -0.6}) {
      Field y = vt::solve_state(p, Control::constant(c, 1, g.size()), g);
      for (int i = 0; i < g.size(); i += 16)
        worst = std::max(worst, std::abs(y.at(i)(0) - double_term_oracle(g.node(i)(0), c, a, beta, kappa,
                                                                          gamma, y0)));
    }
    v.require(worst <= 1e-3, "double term: " + sci(worst));
    v.detail << ", double term " << sci(worst);
  }
}

// ------------------------------------------------------------------ 4

ProblemDef definition_of(const Problem& p, bool symmetrized) {
  ProblemDef d;
  d.family = p.family;
  d.n = p.n;
  d.m = p.m;
  d.forcing = p.forcing;
  d.f1 = p.f1;
  d.F1 = p.F1;
  d.F0 = p.F0;
  d.f2 = symmetrized ? symmetrize(p.f2_original, SwapSpec::dynamics()) : p.f2_original;
  d.F2 = symmetrized ? symmetrize(p.F2_original, SwapSpec::cost()) : p.F2_original;
  return d;
}

void symmetrization_invariance(Check& v) {
  double worst = 0, asym = 0;
  for (const char* name : {"fredholm-quadratic", "fredholm-vector", "volterra-double", "volterra-nonlinear"}) {
    Problem base = preset(name);
    Problem raw = make_problem(definition_of(base, false));
    Problem sym = make_problem(definition_of(base, true));
    if (!raw.f2_original.is_zero())
      asym = std::max(asym, check_symmetry(raw.f2_original, SwapSpec::dynamics(), 64, 7));
    if (!raw.F2_original.is_zero())
      asym = std::max(asym, check_symmetry(raw.F2_original, SwapSpec::cost(), 64, 7));
    Grid g = Grid::interval(1.0, 32);
    std::mt19937_64 rng(4);
    Control u = 0.5 * oracle::random_direction(g, base.m, rng);
    double ds, dJ, dg;
    if (base.family == Family::fredholm) {
      auto a = fh::solve(raw, u, g), b = fh::solve(sym, u, g);
      ds = (a.state - b.state).sup_norm();
      dJ = std::abs(a.cost - b.cost);
      dg = (fh::gradient(raw, g, a) - fh::gradient(sym, g, b)).sup_norm();
    } else {
      auto a = vt::solve(raw, u, g), b = vt::solve(sym, u, g);
      ds = (a.state - b.state).sup_norm();
      dJ = std::abs(a.cost - b.cost);
      dg = (vt::gradient(raw, g, a) - vt::gradient(sym, g, b)).sup_norm();
    }
    const double w = std::max({ds, dJ, dg});
    worst = std::max(worst, w);
    v.require(w <= 1e-12, std::string(name) + ": state " + sci(ds) + ", J " + sci(dJ) + ", gradient " + sci(dg));
  }
  v.require(asym > 1e-3, "given kernels are already symmetric, the check is vacuous");
  v.detail << "4 presets, kernel asymmetry " << sci(asym) << ", worst change " << sci(worst);
}

// ------------------------------------------------------------------ 5

using Integrand = std::function<double(double t, double s, double xt, double xs)>;

/// March of x_i = x0 + Σ_{j≤i} w_j [Σ_{k<j} w_k g(t_j, t_k, x_j, x_k) + ½ w_j g(t_j, t_j, x_j, x_j)]
/// with trapezoid weights on [0, t_i], each node by fixed-point iteration.
Vec nested_march(int N, double x0, const Integrand& G) {
  const double h = 1.0 / N;
  Vec x = Vec::Zero(N + 1);
  auto w = [&](int i, int j) { return i == 0 ? 0.0 : (j == 0 || j == i) ? h / 2 : h; };
  for (int i = 0; i <= N; ++i) {
    double v = i ? x(i - 1) : x0;
    for (int it = 0; it < 300; ++it) {
      x(i) = v;
      double s = x0;
      for (int j = 0; j <= i; ++j) {
        const double tj = j * h;
        for (int k = 0; k < j; ++k) s += w(i, j) * w(i, k) * G(tj, k * h, x(j), x(k));
        s += 0.5 * w(i, j) * w(i, j) * G(tj, tj, x(j), x(j));
      }
      const bool done = std::abs(s - v) < 1e-15;
      v = s;
      if (done) break;
    }
    x(i) = v;
  }
  return x;
}

void nested_folded_equivalence(Check& v) {
  const std::vector<Integrand> cases{
      [](double, double s, double xt, double xs) { return 0.5 * xs + 0.3 * s * std::sin(xt); },
      [](double t, double s, double xt, double xs) { return std::cos(t - s) * xs - 0.2 * xt * xs; },
  };
  double worst = 0;
  for (const auto& G : cases)
    for (int N : {40, 64}) {
      ProblemDef d;
      d.family = Family::volterra;
      d.forcing = [](const Point&) { return Vec::Constant(1, 1.0); };
      d.f2 = fold_causal(Kernel(
          1, {1, 1, 1, 1},
          [G](const Points& p, const Vec& a) { return Vec::Constant(1, G(p[1](0), p[2](0), a(0), a(1))); }, {},
          {}));
      Problem p = make_problem(d);
      Grid g = Grid::interval(1.0, N);
      Field y = vt::solve_state(p, Control(1, g.size()), g);
      Vec x = nested_march(N, 1.0, G);
      for (int i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(y.at(i)(0) - x(i)));
    }
  v.require(worst <= 1e-10, "nested vs folded: " + sci(worst));
  v.detail << "2 integrands at N=40 and 64, worst " << sci(worst);
}

// ------------------------------------------------------------------ 6

void resolvent_identities(Check& v) {
  double fconst = 0, vconst = 0, fres = 0, vres = 0;
  {
    Grid g = Grid::interval(1.0, 16);
    for (double lam : {0.3, 0.5, -0.7}) {
      BlockKernel A(g.size(), 1, 1, Mat::Constant(g.size(), g.size(), lam));
      BlockKernel S = fh::fredholm_resolvent(A, g);
      fconst = std::max(fconst, (S.matrix().array() - lam / (1 - lam)).abs().maxCoeff());
    }
  }
  {
    Grid g = Grid::interval(1.0, 256);
    const int N = g.size();
    for (double lam : {0.8, -0.5}) {
      BlockKernel A(N, 1, 1);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j <= i; ++j) A.block(i, j)(0, 0) = lam;
      BlockKernel S = vt::volterra_resolvent(A, g);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j <= i; ++j)
          vconst = std::max(vconst, std::abs(S.block(i, j)(0, 0) -
                                             lam * std::exp(lam * (g.node(i)(0) - g.node(j)(0)))));
    }
  }
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> ud(-0.4, 0.4);
  {
    Grid g = Grid::interval(1.0, 12);
    const int n = 2, N = g.size();
    BlockKernel A(N, n, n, Mat::NullaryExpr(N * n, N * n, [&]() { return ud(rng); }));
    BlockKernel S = fh::fredholm_resolvent(A, g);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        Mat r = S.block(i, j) - A.block(i, j);
        for (int k = 0; k < N; ++k) r -= g.weight(k) * A.block(i, k) * S.block(k, j);
        fres = std::max(fres, r.cwiseAbs().maxCoeff());
      }
  }
  {
    Grid g = Grid::interval(1.0, 30);
    const int n = 2, N = g.size();
    const double h = g.step();
    BlockKernel A(N, n, n);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j <= i; ++j) A.block(i, j) = Mat::NullaryExpr(n, n, [&]() { return 2.5 * ud(rng); });
    BlockKernel S = vt::volterra_resolvent(A, g);
    // S(t_i, s_j) = A(t_i, s_j) + ∫_{s_j}^{t_i} A(t_i, σ) S(σ, s_j) dσ, trapezoid in σ.
    for (int j = 0; j < N; ++j)
      for (int i = j; i < N; ++i) {
        Mat r = S.block(i, j) - A.block(i, j);
        for (int k = j; k <= i && i > j; ++k)
          r -= (k == j || k == i ? h / 2 : h) * A.block(i, k) * S.block(k, j);
        vres = std::max(vres, r.cwiseAbs().maxCoeff());
      }
  }
  v.require(fconst <= 1e-10, "Fredholm constant kernel " + sci(fconst));
  v.require(vconst <= 1e-3, "Volterra constant kernel " + sci(vconst));
  v.require(fres <= 1e-10 && vres <= 1e-10, "substitution residuals " + sci(fres) + ", " + sci(vres));
  v.detail << "Fredholm constant " << sci(fconst) << ", Volterra constant " << sci(vconst)
           << ", residuals " << sci(fres) << " / " << sci(vres);
}

// ------------------------------------------------------------------ 7

Mat random_mat(int r, int c, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> nd;
  return Mat::NullaryExpr(r, c, [&]() { return scale * nd(rng); });
}

Mat sym(const Mat& M) { return 0.5 * (M + M.transpose()); }

fh::AccessoryData random_fredholm_data(int N, int n, int m, std::mt19937_64& rng) {
  fh::AccessoryData d;
  d.A = BlockKernel(N, n, n, random_mat(N * n, N * n, rng, 0.2));
  d.B = BlockKernel(N, n, m, random_mat(N * n, N * m, rng, 0.3));
  for (int i = 0; i < N; ++i) {
    d.P1.push_back(sym(random_mat(n, n, rng, 1)));
    d.Q1.push_back(random_mat(n, m, rng, 1));
    d.R1.push_back(sym(random_mat(m, m, rng, 1)));
  }
  d.P2 = BlockKernel(N, n, n, sym(random_mat(N * n, N * n, rng, 0.3)));
  d.Q2 = BlockKernel(N, n, m, random_mat(N * n, N * m, rng, 0.3));
  d.R2 = BlockKernel(N, m, m, sym(random_mat(N * m, N * m, rng, 0.3)));
  return d;
}

vt::AccessoryProblem random_volterra_data(int N, int n, int m, std::mt19937_64& rng) {
  vt::AccessoryProblem a;
  a.A1 = BlockKernel(N, n, n);
  a.B1 = BlockKernel(N, n, m);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j <= i; ++j) {
      a.A1.block(i, j) = random_mat(n, n, rng, 0.5);
      a.B1.block(i, j) = random_mat(n, m, rng, 0.5);
    }
  a.P0 = sym(random_mat(n, n, rng, 1));
  for (int i = 0; i < N; ++i) {
    a.P1.push_back(sym(random_mat(n, n, rng, 1)));
    a.Q1.push_back(random_mat(n, m, rng, 1));
    a.R1.push_back(sym(random_mat(m, m, rng, 1)));
  }
  a.P2 = BlockKernel(N, n, n, sym(random_mat(N * n, N * n, rng, 0.3)));
  a.Q2 = BlockKernel(N, n, m, random_mat(N * n, N * m, rng, 0.3));
  a.R2 = BlockKernel(N, m, m, sym(random_mat(N * m, N * m, rng, 0.3)));
  return a;
}

void accessory_reduction(Check& v) {
  std::mt19937_64 rng(41);
  double fw = 0, vw = 0;
  for (int k = 0; k < 5; ++k) {
    Grid g = Grid::interval(1.0, 10 + k);
    const int N = g.size();
    auto d = random_fredholm_data(N, 2, 2, rng);
    Control U = oracle::white_direction(g, 2, rng);
    const double reduced = fh::assemble_accessory(d, g).value(U, g);
    const double direct = oracle::fredholm_accessory_direct(d.A, d.B, d.P1, d.Q1, d.R1, d.P2, d.Q2, d.R2, g, U);
    fw = std::max(fw, oracle::rel_err(reduced, direct));

    auto a = vt::reduce_accessory(random_volterra_data(N, 2, 1 + k % 2, rng), g);
    Control W = oracle::white_direction(g, 1 + k % 2, rng);
    const double vreduced = 0.5 * vt::form(a).value(W, g);
    const double vdirect =
        oracle::volterra_accessory_direct(a.A1, a.B1, a.P0, a.P1, a.Q1, a.R1, a.P2, a.Q2, a.R2, g, W);
    vw = std::max(vw, oracle::rel_err(vreduced, vdirect));
  }
  v.require(fw <= 1e-6, "Fredholm reduced vs direct " + sci(fw));
  v.require(vw <= 1e-6, "Volterra reduced vs direct " + sci(vw));
  v.detail << "5 random inputs per family, worst rel " << sci(fw) << " / " << sci(vw);
}

// ------------------------------------------------------------------ 8

struct FormAt {
  QuadIntegralForm form;
  SecondVariation d2J;
};

FormAt form_at(const Problem& p, const Grid& g, const Control& u) {
  FormAt r;
  if (p.family == Family::fredholm) {
    auto s = fh::solve(p, u, g);
    r.form = fh::assemble_accessory(fh::accessory_from_solution(p, g, s), g);
  } else {
    auto s = vt::solve(p, u, g);
    r.form = vt::form(vt::reduce_accessory(vt::accessory_from_solution(p, g, s), g));
  }
  r.d2J = second_variation_at(p, g, u);
  return r;
}

/// Smallest δ²J(du)/‖du‖² over 10⁴ random directions, half smooth, half white.
double probe_min(const std::function<double(const Control&)>& d2J, const Grid& g, int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double lo = INFINITY;
  for (int t = 0; t < 10000; ++t) {
    Control du = t % 2 ? oracle::white_direction(g, m, rng) : oracle::random_direction(g, m, rng);
    lo = std::min(lo, d2J(du) / l2sq(du, g));
  }
  return lo;
}

/// Signs agree when both are positive, both negative, or the Gram
/// eigenvalue is too small to carry a sign.
bool signs_agree(double gram, double probed, double scale) {
  if (std::abs(gram) <= 1e-9 * scale) return true;
  return (gram > 0) == (probed > 0);
}

void sufficiency_tests(Check& v) {
  int fired = 0, cases = 0, negatives = 0;
  auto record = [&](const std::string& name, const PDReport& r, const std::function<double(const Control&)>& d2J,
                    const Grid& g, int m) {
    ++cases;
    if (r.pointwise == Verdict::positive_definite) {
      ++fired;
      v.require(r.min_eig_discrete > 0, name + ": pointwise PD but Gram min eigenvalue " + sci(r.min_eig_discrete));
    }
    const double lo = probe_min(d2J, g, m, 77 + cases);
    if (lo < 0) ++negatives;
    v.require(signs_agree(r.min_eig_discrete, lo, 1.0),
              name + ": Gram " + sci(r.min_eig_discrete) + " vs probed " + sci(lo));
  };

  // Generic catalog at the optimizer's candidate, plus two indefinite variants at u = 0.
  for (const auto& e : presets::catalog()) {
    presets::GridSpec gs = e.grid;
    if (gs.bounds.empty()) gs.N = 16;
    Grid g = gs.build();
    Problem p = e.build({});
    Control u = p.family == Family::fredholm ? minimize(fh::Functional(p, g), Control(p.m, g.size())).control
                                             : minimize(vt::Functional(p, g), Control(p.m, g.size())).control;
    FormAt f = form_at(p, g, u);
    PDReport r = check_pd(f.form, g);
    record(e.name, r, f.d2J.at, g, p.m);
  }
  for (const char* name : {"fredholm-linear", "volterra-exp"}) {
    Grid g = Grid::interval(1.0, 16);
    Problem p = preset(name, {{"r", -0.5}});
    FormAt f = form_at(p, g, Control(p.m, g.size()));
    record(std::string(name) + " (r = -0.5)", check_pd(f.form, g), f.d2J.at, g, p.m);
  }

  // Bilinear systems: the first-order pointwise test, and the joint (M1, M2)
  // test for second-order systems.
  Grid g = Grid::interval(1.0, 16);
  for (const auto& name : bc::preset_names()) {
    if (bc::is_first_order(name)) {
      auto b = bc::preset1(name);
      auto s = bc::solve_nc1(b, g);
      record(name, bc::sufficiency1(b, g, s), [&](const Control& du) { return bc::second_variation1(b, g, s, du); },
             g, b.m);
    } else {
      auto b = bc::preset2(name);
      auto s = bc::solve_nc2(b, g);
      auto suff = bc::sufficiency2(b, g, s);
      if (suff.joint.pointwise == Verdict::positive_definite) {
        ++fired;
        v.require(suff.joint.min_eig_discrete > 0, name + ": joint pointwise PD but Gram " +
                                                         sci(suff.joint.min_eig_discrete));
      }
      record(name, suff.sharpened, [&](const Control& du) { return bc::second_variation2(b, g, s, du); }, g, b.m);
    }
  }
  v.require(fired > 0, "the pointwise verdict never fired");
  v.require(negatives > 0, "no indefinite case was exercised");
  v.detail << cases << " forms, pointwise verdict fired on " << fired << ", " << negatives
           << " indefinite, 10^4 probes each";
}

// ------------------------------------------------------------------ 9

void stationarity_closures(Check& v) {
  Grid g = Grid::interval(1.0, 32);
  double worst = 0, generic = 0, dJ = 0;
  for (const auto& name : lqc::preset_names()) {
    auto lp = lqc::preset(name);
    auto s = lqc::solve_lqc(lp, g);
    Problem p = lqc::to_problem(lp);
    const double gr = fh::gradient(p, g, fh::solve(p, s.control, g)).sup_norm();
    worst = std::max(worst, s.stationarity_residual);
    generic = std::max(generic, gr);
    v.require(s.stationarity_residual <= 1e-8 && gr <= 1e-8,
              name + ": residual " + sci(s.stationarity_residual) + ", generic gradient " + sci(gr));
    if (name == "lqc-lq") {
      OptimRun run = minimize(fh::Functional(p, g), Control(p.m, g.size()));
      dJ = std::max(dJ, std::abs(run.cost - s.cost));
    }
  }
  for (const auto& name : bc::preset_names()) {
    auto b = bc::preset2(name);
    auto s = bc::is_first_order(name) ? bc::solve_nc1(bc::preset1(name), g) : bc::solve_nc2(b, g);
    Problem p = bc::to_problem(b);
    const double gr = vt::gradient(p, g, vt::solve(p, s.control, g)).sup_norm();
    worst = std::max(worst, s.stationarity_residual);
    generic = std::max(generic, gr);
    v.require(s.stationarity_residual <= 1e-8 && gr <= 1e-8,
              name + ": residual " + sci(s.stationarity_residual) + ", generic gradient " + sci(gr));
    if (name == "bilinear1-lq") {
      OptimRun run = minimize(vt::Functional(p, g), Control(p.m, g.size()));
      dJ = std::max(dJ, std::abs(run.cost - s.cost));
    }
  }
  v.require(dJ <= 1e-6, "optimizer cost gap " + sci(dJ));
  v.detail << "residual " << sci(worst) << ", generic gradient " << sci(generic) << ", optimizer gap on LQ "
           << sci(dJ);
}

// ------------------------------------------------------------------ 10

/// result(r) = A(r[src[0]], r[src[1]], r[src[2]]) by explicit loops.
Tri3 rearrange(const Tri3& a, std::array<int, 3> src, const Signature& to) {
  Tri3::Dims rd{};
  for (std::size_t p = 0; p < 3; ++p) rd[static_cast<std::size_t>(src[p])] = a.dims()[p];
  Tri3 r(rd, to);
  for (Eigen::Index i = 0; i < rd[0]; ++i)
    for (Eigen::Index j = 0; j < rd[1]; ++j)
      for (Eigen::Index k = 0; k < rd[2]; ++k) {
        const std::array<Eigen::Index, 3> x{i, j, k};
        r(i, j, k) = a(x[static_cast<std::size_t>(src[0])], x[static_cast<std::size_t>(src[1])],
                       x[static_cast<std::size_t>(src[2])]);
      }
  return r;
}

void multiarray_identities(Check& v) {
  using T = Transposition;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(1, 4);
  std::uniform_real_distribution<double> ud(-1, 1);
  int broken = 0;
  double bil = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Signature s = rep % 2 ? Signature::two_lower_one_upper() : Signature::one_lower_two_upper();
    const bool uul = rep % 2 == 0;
    Tri3 a({dim(rng), dim(rng), dim(rng)}, s);
    for (auto& x : a.data()) x = ud(rng);
    auto tr = [](const Tri3& x, T t) { return transpose(x, t); };
    std::vector<bool> ok{
        tr(a, T::plus) == rearrange(a, {2, 0, 1}, s),
        tr(a, T::minus) == rearrange(a, {1, 2, 0}, s),
        tr(a, T::swap) == rearrange(a, {1, 0, 2}, s),
        tr(a, T::clockwise) == rearrange(a, uul ? std::array<int, 3>{2, 1, 0} : std::array<int, 3>{0, 2, 1}, s),
        tr(a, T::anticlockwise) == rearrange(a, uul ? std::array<int, 3>{0, 2, 1} : std::array<int, 3>{2, 1, 0}, s),
        tr(a, T::flip) == rearrange(a, {0, 1, 2}, s.flipped()),
        tr(tr(tr(a, T::plus), T::plus), T::plus) == a,
        tr(tr(tr(a, T::minus), T::minus), T::minus) == a,
        tr(tr(a, T::plus), T::minus) == a,
        tr(tr(a, T::minus), T::plus) == a,
        tr(tr(a, T::plus), T::plus) == tr(a, T::minus),
        tr(tr(a, T::swap), T::swap) == a,
        tr(tr(a, T::flip), T::flip) == a,
        tr(tr(a, T::clockwise), T::clockwise) == a,
        tr(tr(a, T::anticlockwise), T::anticlockwise) == a,
        tr(tr(a, T::flip), T::plus) == tr(tr(a, T::plus), T::flip),
        tr(tr(a, T::flip), T::swap) == tr(tr(a, T::swap), T::flip),
    };
    for (auto t : {T::plus, T::minus, T::flip, T::swap, T::clockwise, T::anticlockwise}) {
      auto d = describe(t, s);
      ok.push_back(transpose(transpose(a, d), d.inverse()) == a);
    }
    for (bool b : ok) broken += !b;

    if (!uul) continue;
    // w (A u^{(1)}) == u^T (A^{T+}) (w^T)^{(2)}
    Vec u = Vec::NullaryExpr(a.dims()[0], [&]() { return ud(rng); });
    CoVec w = Vec::NullaryExpr(a.dims()[2], [&]() { return ud(rng); }).transpose();
    CoVec lhs = w * act(a, u, 1);
    CoVec rhs = u.transpose() * act(transpose(a, T::plus), w.transpose(), 2);
    for (Eigen::Index k = 0; k < a.dims()[1]; ++k) {
      double ref = 0, mag = 0;
      for (Eigen::Index i = 0; i < a.dims()[2]; ++i)
        for (Eigen::Index j = 0; j < a.dims()[0]; ++j) {
          ref += w(i) * a(j, k, i) * u(j);
          mag += std::abs(w(i) * a(j, k, i) * u(j));
        }
      const double eps = 4 * std::numeric_limits<double>::epsilon() * std::max(mag, 1e-300);
      bil = std::max({bil, std::abs(lhs(k) - ref) / eps, std::abs(rhs(k) - ref) / eps});
    }
  }
  v.require(broken == 0, std::to_string(broken) + " transposition relations failed");
  v.require(bil <= 1.0, "bilinear identity off by " + sci(bil) + " rounding units");
  v.detail << "100 random instances, " << broken << " broken relations, bilinear identity error "
           << sci(bil) << " of the 4-ulp bound";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
      {"gradient fidelity", [](Check& v) { derivative_fidelity(v, false); }},
      {"second-variation fidelity", [](Check& v) { derivative_fidelity(v, true); }},
      {"closed-form state solves", closed_form_states},
      {"symmetrization invariance", symmetrization_invariance},
      {"nested and folded forms agree", nested_folded_equivalence},
      {"resolvent identities", resolvent_identities},
      {"accessory reduction", accessory_reduction},
      {"sufficiency tests", sufficiency_tests},
      {"stationarity closures", stationarity_closures},
      {"multiarray identities", multiarray_identities},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Check v;
    auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[k].second(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    failures += !v.pass;
    std::printf("criterion %zu (%s): %s  %s  [%.1f s]\n", k + 1, criteria[k].first.c_str(), v.pass ? "PASS" : "FAIL",
                v.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
