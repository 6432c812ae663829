#pragma once

#include <functional>
#include <string>
#include <utility>

#include "intocp/errors.hpp"
#include "intocp/fields.hpp"
#include "intocp/kernel.hpp"
#include "intocp/quadrature.hpp"

namespace intocp {

enum class Family { fredholm, volterra };

/// User-facing description of a problem before ingestion.
///
/// Kernel layouts (points; slots), with n states and m controls:
///   f1: (x, y; φ, u) -> R^n            F1: (x; φ, u) -> R
///   f2: (x, y, z; φ1, φ2, u1, u2) -> R^n
///   F2: (x, z; φ1, φ2, u1, u2) -> R    F0: (T; Y) -> R, Volterra only
/// For Volterra problems read x, y, z as t, s, σ. Default-constructed
/// kernels are treated as zero.
struct ProblemDef {
  Family family = Family::fredholm;
  int n = 1;
  int m = 1;
  std::function<Vec(const Point&)> forcing;
  Kernel f1, f2, F1, F2, F0;
};

/// An ingested problem: every kernel has its layout checked, f2 and F2 are
/// symmetrized unless they were declared symmetric and pass the check.
/// The kernels as given are kept in f2_original / F2_original.
struct Problem {
  Family family = Family::fredholm;
  int n = 1;
  int m = 1;
  std::function<Vec(const Point&)> forcing;
  Kernel f1, f2, F1, F2, F0;
  Kernel f2_original, F2_original;

  Vec forcing_at(const Point& x) const { return forcing ? forcing(x) : Vec::Zero(n); }

  Field forcing_field(const Grid& g) const {
    Field f(n, g.size());
    for (int i = 0; i < g.size(); ++i) f.at(i) = forcing_at(g.node(i));
    return f;
  }
};

/// Tolerance used when checking declared symmetry at ingestion.
inline constexpr double kSymmetryTolerance = 1e-12;

namespace detail {

inline Kernel conform(const Kernel& k, int out, std::vector<int> slots,
                      const char* name) {
  if (k.slot_count() == 0 && k.out_dim() == 0) return Kernel::zero(out, std::move(slots));
  if (k.out_dim() != out || k.slots() != slots)
    throw ShapeError(std::string("problem: kernel ") + name + " has the wrong layout");
  return k;
}

inline Kernel ingest_pair(const Kernel& k, const SwapSpec& s) {
  if (k.is_zero()) return k;
  if (k.declared_symmetric()) {
    double scale = 1.0;
    auto probes = random_probes(k, 16, 0x5eed);
    for (const auto& p : probes) scale = std::max(scale, k.value(p.points, p.args).cwiseAbs().maxCoeff());
    if (check_symmetry(k, s, probes) <= kSymmetryTolerance * scale) return k;
  }
  return symmetrize(k, s);
}

}  // namespace detail

inline Problem make_problem(const ProblemDef& d) {
  if (d.n < 1 || d.m < 0) throw ShapeError("problem: need n >= 1 and m >= 0");
  Problem p;
  p.family = d.family;
  p.n = d.n;
  p.m = d.m;
  p.forcing = d.forcing;
  const int n = d.n, m = d.m;
  p.f1 = detail::conform(d.f1, n, {n, m}, "f1");
  p.f2_original = detail::conform(d.f2, n, {n, n, m, m}, "f2");
  p.F1 = detail::conform(d.F1, 1, {n, m}, "F1");
  p.F2_original = detail::conform(d.F2, 1, {n, n, m, m}, "F2");
  p.F0 = detail::conform(d.F0, 1, {n}, "F0");
  if (d.family == Family::fredholm && !p.F0.is_zero())
    throw ShapeError("problem: F0 is a terminal cost and only exists for Volterra problems");
  p.f2 = detail::ingest_pair(p.f2_original, SwapSpec::dynamics());
  p.F2 = detail::ingest_pair(p.F2_original, SwapSpec::cost());
  return p;
}

}  // namespace intocp
