// Build a scalar Volterra problem from hand-written kernels, minimize it and
// ask whether the candidate passes the second-order test.

#include <cmath>
#include <cstdio>

#include "intocp/intocp.hpp"

using namespace intocp;

int main() {
  // y(t) = 1 + ∫_0^t [-y(s) + u(s)] ds + ½∫_0^t∫_0^t 0.2 y(s)y(σ) dσ ds
  // J = ∫ ½(y - ½)² + ½·0.1 u² dt + ½ y(1)²
  ProblemDef d;
  d.family = Family::volterra;
  d.forcing = [](const Point&) { return Vec::Constant(1, 1.0); };
  d.f1 = Kernel(1, {1, 1}, [](const Points&, const Vec& a) { return Vec::Constant(1, -a(0) + a(1)); }, {}, {});
  d.f2 = Kernel(1, {1, 1, 1, 1}, [](const Points&, const Vec& a) { return Vec::Constant(1, 0.2 * a(0) * a(1)); },
                {}, {});
  d.F1 = Kernel(1, {1, 1}, [](const Points&, const Vec& a) {
    return Vec::Constant(1, 0.5 * std::pow(a(0) - 0.5, 2) + 0.05 * a(1) * a(1));
  }, {}, {});
  d.F0 = Kernel(1, {1}, [](const Points&, const Vec& a) { return Vec::Constant(1, 0.5 * a(0) * a(0)); }, {}, {});
  Problem p = make_problem(d);

  Grid g = Grid::interval(1.0, 40);
  volterra::Functional J(p, g);
  OptimRun run = minimize(J, J.zero_control());
  std::printf("%s after %zu iterations, J = %.10f\n", to_string(run.reason), run.iterates.size() - 1, run.cost);

  auto s = volterra::solve(p, run.control, g);
  QuadIntegralForm f = volterra::form(volterra::reduce_accessory(volterra::accessory_from_solution(p, g, s), g));
  PDReport r = volterra::check_pd_volterra(f, g);
  std::printf("second-order test: %s (smallest Gram eigenvalue %.3e)\n", to_string(r.verdict), r.min_eig_discrete);
  return 0;
}
