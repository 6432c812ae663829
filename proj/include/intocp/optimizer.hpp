#pragma once

#include <cmath>
#include <concepts>
#include <string>
#include <vector>

#include "intocp/errors.hpp"
#include "intocp/fields.hpp"
#include "intocp/quadrature.hpp"

namespace intocp {

/// Anything with a cost and an L² gradient over controls on a grid.
template <typename F>
concept ControlFunctional = requires(const F& f, const Control& u) {
  { f.cost(u) } -> std::convertible_to<double>;
  { f.gradient(u) } -> std::convertible_to<CoControl>;
  { f.grid() } -> std::convertible_to<const Grid&>;
};

/// (J(u+εδu) - J(u-εδu)) / 2ε.
template <ControlFunctional F>
double fd_gradient(const F& f, const Control& u, const Control& du, double eps) {
  if (!(eps > 0)) throw ShapeError("fd_gradient: eps must be positive");
  const double jp = f.cost(u + eps * du);
  const double jm = f.cost(u - eps * du);
  return (jp - jm) / (2 * eps);
}

/// (J(u+εδu) - 2J(u) + J(u-εδu)) / ε².
template <ControlFunctional F>
double fd_second(const F& f, const Control& u, const Control& du, double eps) {
  if (!(eps > 0)) throw ShapeError("fd_second: eps must be positive");
  const double j0 = f.cost(u);
  const double jp = f.cost(u + eps * du);
  const double jm = f.cost(u - eps * du);
  return (jp - 2 * j0 + jm) / (eps * eps);
}

enum class Termination { gradient_tol, step_tol, max_iters };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::gradient_tol: return "gradient-tol";
    case Termination::step_tol: return "step-tol";
    case Termination::max_iters: return "max-iters";
  }
  return "?";
}

struct OptimOptions {
  int max_iters = 2000;
  double grad_tol = 1e-8;
  double step_tol = 1e-14;
  double armijo = 1e-4;
  double shrink = 0.5;
  double initial_step = 1.0;
  /// Compare the adjoint slope with fd_gradient every this many iterations;
  /// 0 turns the check off.
  int check_every = 0;
  double check_eps = 1e-5;
};

struct Iterate {
  double cost = 0;
  double grad_norm = 0;
  /// Accepted step length; 0 for the final entry.
  double step = 0;
  /// Trial points whose solve failed during this line search.
  int failed_trials = 0;
};

/// Adjoint slope along the search direction against fd_gradient.
struct SlopeCheck {
  int iteration = 0;
  double slope = 0;
  double fd = 0;
  double rel_error = 0;
};

struct OptimRun {
  std::vector<Iterate> iterates;
  Control control;
  double cost = 0;
  Termination reason = Termination::max_iters;
  /// Results of the periodic slope check.
  std::vector<SlopeCheck> slope_checks;
};

/// Steepest descent in the L² pairing with Armijo backtracking. A trial
/// point whose solve throws is treated as a failed step and shrunk.
template <ControlFunctional F>
OptimRun minimize(const F& f, const Control& u0, const OptimOptions& opt = {}) {
  const Grid& g = f.grid();
  OptimRun run;
  Control u = u0;
  double J = f.cost(u);
  for (int it = 0;; ++it) {
    CoControl grad = f.gradient(u);
    const double gnorm = grad.sup_norm();
    run.iterates.push_back({J, gnorm, 0.0, 0});
    if (gnorm <= opt.grad_tol) {
      run.reason = Termination::gradient_tol;
      break;
    }
    if (it >= opt.max_iters) {
      run.reason = Termination::max_iters;
      break;
    }
    Control d(-grad.values());
    const double slope = pair(grad, d, g);
    if (opt.check_every > 0 && it % opt.check_every == 0) {
      const double fd = fd_gradient(f, u, d, opt.check_eps);
      run.slope_checks.push_back({it, slope, fd, std::abs(fd - slope) / std::max(std::abs(slope), 1e-300)});
    }
    double step = opt.initial_step;
    bool accepted = false;
    Iterate& rec = run.iterates.back();
    while (step > opt.step_tol) {
      Control trial = u + step * d;
      double Jt;
      try {
        Jt = f.cost(trial);
      } catch (const Error&) {
        ++rec.failed_trials;
        step *= opt.shrink;
        continue;
      }
      if (std::isfinite(Jt) && Jt < J && Jt <= J + opt.armijo * step * slope) {
        u = std::move(trial);
        J = Jt;
        rec.step = step;
        accepted = true;
        break;
      }
      step *= opt.shrink;
    }
    if (!accepted) {
      run.reason = Termination::step_tol;
      break;
    }
  }
  run.control = u;
  run.cost = J;
  return run;
}

}  // namespace intocp
