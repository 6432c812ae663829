#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "intocp/errors.hpp"
#include "intocp/multiarray.hpp"
#include "intocp/quadrature.hpp"

namespace intocp {

/// Point arguments of a kernel, e.g. (x, y, z) for f2 or (x, z) for F2.
/// Unused trailing entries are ignored.
using Points = std::array<Point, 3>;

/// A vector-valued function of up to three points and a stacked argument
/// vector made of slots (e.g. φ1, φ2, u1, u2), together with its first and
/// second derivatives in the stacked arguments. Missing derivatives fall
/// back to central finite differences.
class Kernel {
 public:
  using ValueFn = std::function<Vec(const Points&, const Vec&)>;
  /// out x D matrix.
  using JacobianFn = std::function<Mat(const Points&, const Vec&)>;
  /// One D x D matrix per output component.
  using HessianFn = std::function<std::vector<Mat>(const Points&, const Vec&)>;

  using ScalarFn = std::function<double(const Points&, const Vec&)>;
  using GradientFn = std::function<Vec(const Points&, const Vec&)>;
  using ScalarHessianFn = std::function<Mat(const Points&, const Vec&)>;

  static constexpr double fd_step1 = 1e-5;
  static constexpr double fd_step2 = 1e-4;

  Kernel() = default;

  Kernel(int out, std::vector<int> slots, ValueFn value, JacobianFn jac = {},
         HessianFn hess = {})
      : out_(out), slots_(std::move(slots)), value_(std::move(value)),
        jac_(std::move(jac)), hess_(std::move(hess)) {
    init_offsets();
    zero_ = !value_;
  }

  static Kernel zero(int out, std::vector<int> slots) {
    return Kernel(out, std::move(slots), ValueFn{});
  }

  /// Scalar kernel from a value, optional gradient and optional Hessian.
  static Kernel scalar(std::vector<int> slots, ScalarFn f, GradientFn g = {},
                       ScalarHessianFn h = {}) {
    ValueFn v = [f](const Points& p, const Vec& a) {
      return Vec::Constant(1, f(p, a));
    };
    JacobianFn j;
    if (g) j = [g](const Points& p, const Vec& a) -> Mat { return g(p, a).transpose(); };
    HessianFn hh;
    if (h) hh = [h](const Points& p, const Vec& a) { return std::vector<Mat>{h(p, a)}; };
    return Kernel(1, std::move(slots), std::move(v), std::move(j), std::move(hh));
  }

  int out_dim() const { return out_; }
  int arg_dim() const { return dim_; }
  int slot_count() const { return static_cast<int>(slots_.size()); }
  int slot_size(int s) const { return slots_[static_cast<std::size_t>(s)]; }
  int slot_offset(int s) const { return offsets_[static_cast<std::size_t>(s)]; }
  const std::vector<int>& slots() const { return slots_; }
  bool is_zero() const { return zero_; }
  bool has_jacobian() const { return zero_ || static_cast<bool>(jac_); }
  bool has_hessian() const { return zero_ || static_cast<bool>(hess_); }

  /// True when the owner asserted the two-point swap symmetry.
  bool declared_symmetric() const { return declared_symmetric_; }
  Kernel& declare_symmetric(bool on = true) {
    declared_symmetric_ = on;
    return *this;
  }

  Vec value(const Points& p, const Vec& a) const {
    check_args(a);
    if (zero_) return Vec::Zero(out_);
    return value_(p, a);
  }
  double scalar_value(const Points& p, const Vec& a) const { return value(p, a)(0); }

  Mat jacobian(const Points& p, const Vec& a) const {
    check_args(a);
    if (zero_) return Mat::Zero(out_, dim_);
    if (jac_) return jac_(p, a);
    return fd_jacobian(p, a);
  }

  std::vector<Mat> hessian(const Points& p, const Vec& a) const {
    check_args(a);
    if (zero_) return std::vector<Mat>(static_cast<std::size_t>(out_), Mat::Zero(dim_, dim_));
    if (hess_) return hess_(p, a);
    return fd_hessian(p, a);
  }

  /// Σ_c w_c ∇² f_c, the Hessian of the scalar w·f.
  Mat hessian_contracted(const Points& p, const Vec& a, const CoVec& w) const {
    if (w.size() != out_) throw ShapeError("hessian_contracted: weight dimension");
    if (zero_) return Mat::Zero(dim_, dim_);
    if (hess_) {
      auto hs = hess_(p, a);
      Mat r = Mat::Zero(dim_, dim_);
      for (int c = 0; c < out_; ++c)
        if (w(c) != 0.0) r += w(c) * hs[static_cast<std::size_t>(c)];
      return r;
    }
    return fd_hessian_scalar([&](const Vec& x) { return w.dot(value_(p, x)); }, a);
  }

  /// Central-difference Jacobian, step 1e-5 * max(1, |a_d|).
  Mat fd_jacobian(const Points& p, const Vec& a) const {
    Mat J(out_, dim_);
    Vec x = a;
    for (int d = 0; d < dim_; ++d) {
      const double h = fd_step1 * std::max(1.0, std::abs(a(d)));
      x(d) = a(d) + h;
      Vec fp = value(p, x);
      x(d) = a(d) - h;
      Vec fm = value(p, x);
      x(d) = a(d);
      J.col(d) = (fp - fm) / (2 * h);
    }
    return J;
  }

  /// Nested central-difference Hessians, step 1e-4 * max(1, |a_d|).
  std::vector<Mat> fd_hessian(const Points& p, const Vec& a) const {
    std::vector<Mat> H(static_cast<std::size_t>(out_), Mat(dim_, dim_));
    Vec x = a;
    const Vec f0 = value(p, a);
    for (int d = 0; d < dim_; ++d) {
      const double hd = fd_step2 * std::max(1.0, std::abs(a(d)));
      x(d) = a(d) + hd;
      Vec fp = value(p, x);
      x(d) = a(d) - hd;
      Vec fm = value(p, x);
      x(d) = a(d);
      Vec dd = (fp - 2 * f0 + fm) / (hd * hd);
      for (int c = 0; c < out_; ++c) H[static_cast<std::size_t>(c)](d, d) = dd(c);
      for (int e = d + 1; e < dim_; ++e) {
        const double he = fd_step2 * std::max(1.0, std::abs(a(e)));
        x(d) = a(d) + hd; x(e) = a(e) + he;
        Vec fpp = value(p, x);
        x(e) = a(e) - he;
        Vec fpm = value(p, x);
        x(d) = a(d) - hd;
        Vec fmm = value(p, x);
        x(e) = a(e) + he;
        Vec fmp = value(p, x);
        x(d) = a(d); x(e) = a(e);
        Vec de = (fpp - fpm - fmp + fmm) / (4 * hd * he);
        for (int c = 0; c < out_; ++c) {
          H[static_cast<std::size_t>(c)](d, e) = de(c);
          H[static_cast<std::size_t>(c)](e, d) = de(c);
        }
      }
    }
    return H;
  }

  /// Stack slot values into one argument vector.
  static Vec stack(std::initializer_list<Eigen::Ref<const Vec>> parts) {
    Eigen::Index n = 0;
    for (const auto& q : parts) n += q.size();
    Vec a(n);
    Eigen::Index o = 0;
    for (const auto& q : parts) {
      a.segment(o, q.size()) = q;
      o += q.size();
    }
    return a;
  }

  /// Raw closures, used by the symmetrization wrappers.
  const ValueFn& value_fn() const { return value_; }
  const JacobianFn& jacobian_fn() const { return jac_; }
  const HessianFn& hessian_fn() const { return hess_; }

 private:
  template <typename F>
  Mat fd_hessian_scalar(F&& f, const Vec& a) const {
    Mat H(dim_, dim_);
    Vec x = a;
    const double f0 = f(a);
    for (int d = 0; d < dim_; ++d) {
      const double hd = fd_step2 * std::max(1.0, std::abs(a(d)));
      x(d) = a(d) + hd;
      const double fp = f(x);
      x(d) = a(d) - hd;
      const double fm = f(x);
      x(d) = a(d);
      H(d, d) = (fp - 2 * f0 + fm) / (hd * hd);
      for (int e = d + 1; e < dim_; ++e) {
        const double he = fd_step2 * std::max(1.0, std::abs(a(e)));
        x(d) = a(d) + hd; x(e) = a(e) + he;
        const double fpp = f(x);
        x(e) = a(e) - he;
        const double fpm = f(x);
        x(d) = a(d) - hd;
        const double fmm = f(x);
        x(e) = a(e) + he;
        const double fmp = f(x);
        x(d) = a(d); x(e) = a(e);
        H(d, e) = H(e, d) = (fpp - fpm - fmp + fmm) / (4 * hd * he);
      }
    }
    return H;
  }

  void init_offsets() {
    offsets_.clear();
    dim_ = 0;
    for (int s : slots_) {
      if (s < 0) throw ShapeError("kernel: negative slot size");
      offsets_.push_back(dim_);
      dim_ += s;
    }
  }

  void check_args(const Vec& a) const {
    if (a.size() != dim_) throw ShapeError("kernel: argument vector has wrong size");
  }

  int out_ = 0;
  std::vector<int> slots_;
  std::vector<int> offsets_;
  int dim_ = 0;
  bool zero_ = true;
  bool declared_symmetric_ = false;
  ValueFn value_;
  JacobianFn jac_;
  HessianFn hess_;
};

/// The point swap and slot-pair swaps that define two-point symmetry.
struct SwapSpec {
  int point_a = 1;
  int point_b = 2;
  std::vector<std::pair<int, int>> slot_pairs{{0, 1}, {2, 3}};

  /// f2(x, y, z; φ1, φ2, u1, u2) swaps (y, z) and both slot pairs.
  static SwapSpec dynamics() { return {1, 2, {{0, 1}, {2, 3}}}; }
  /// F2(x, z; φ1, φ2, u1, u2) swaps (x, z) and both slot pairs.
  static SwapSpec cost() { return {0, 1, {{0, 1}, {2, 3}}}; }
};

namespace detail {

/// perm[d] = index of the original argument that lands at position d.
inline std::vector<int> swap_permutation(const Kernel& k, const SwapSpec& s) {
  std::vector<int> perm(static_cast<std::size_t>(k.arg_dim()));
  for (int d = 0; d < k.arg_dim(); ++d) perm[static_cast<std::size_t>(d)] = d;
  for (auto [a, b] : s.slot_pairs) {
    if (a >= k.slot_count() || b >= k.slot_count() || k.slot_size(a) != k.slot_size(b))
      throw ShapeError("symmetrize: incompatible slot pair");
    for (int c = 0; c < k.slot_size(a); ++c) {
      perm[static_cast<std::size_t>(k.slot_offset(a) + c)] = k.slot_offset(b) + c;
      perm[static_cast<std::size_t>(k.slot_offset(b) + c)] = k.slot_offset(a) + c;
    }
  }
  return perm;
}

inline Vec permute(const Vec& a, const std::vector<int>& perm) {
  Vec r(a.size());
  for (Eigen::Index d = 0; d < a.size(); ++d) r(d) = a(perm[static_cast<std::size_t>(d)]);
  return r;
}

inline Points swap_points(const Points& p, const SwapSpec& s) {
  Points q = p;
  std::swap(q[static_cast<std::size_t>(s.point_a)], q[static_cast<std::size_t>(s.point_b)]);
  return q;
}

}  // namespace detail

/// The swapped kernel f(swap(p), P a) with derivatives carried through.
inline Kernel swapped(const Kernel& k, const SwapSpec& s) {
  if (k.is_zero()) return k;
  auto perm = detail::swap_permutation(k, s);
  // perm is an involution, so it is its own inverse.
  auto v = k.value_fn();
  Kernel::ValueFn value = [v, perm, s](const Points& p, const Vec& a) {
    return v(detail::swap_points(p, s), detail::permute(a, perm));
  };
  Kernel::JacobianFn jac;
  if (k.jacobian_fn()) {
    auto j = k.jacobian_fn();
    jac = [j, perm, s](const Points& p, const Vec& a) {
      Mat J = j(detail::swap_points(p, s), detail::permute(a, perm));
      Mat r(J.rows(), J.cols());
      for (Eigen::Index e = 0; e < J.cols(); ++e) r.col(e) = J.col(perm[static_cast<std::size_t>(e)]);
      return r;
    };
  }
  Kernel::HessianFn hess;
  if (k.hessian_fn()) {
    auto h = k.hessian_fn();
    hess = [h, perm, s](const Points& p, const Vec& a) {
      auto H = h(detail::swap_points(p, s), detail::permute(a, perm));
      for (auto& M : H) {
        Mat r(M.rows(), M.cols());
        for (Eigen::Index e = 0; e < M.rows(); ++e)
          for (Eigen::Index f = 0; f < M.cols(); ++f)
            r(e, f) = M(perm[static_cast<std::size_t>(e)], perm[static_cast<std::size_t>(f)]);
        M = std::move(r);
      }
      return H;
    };
  }
  return Kernel(k.out_dim(), k.slots(), value, jac, hess);
}

/// ½[f + swapped f]. Double integrals are unchanged.
inline Kernel symmetrize(const Kernel& k, const SwapSpec& s) {
  if (k.is_zero()) return k;
  Kernel sw = swapped(k, s);
  auto v1 = k.value_fn(), v2 = sw.value_fn();
  Kernel::ValueFn value = [v1, v2](const Points& p, const Vec& a) {
    return Vec(0.5 * (v1(p, a) + v2(p, a)));
  };
  Kernel::JacobianFn jac;
  if (k.jacobian_fn()) {
    auto j1 = k.jacobian_fn(), j2 = sw.jacobian_fn();
    jac = [j1, j2](const Points& p, const Vec& a) { return Mat(0.5 * (j1(p, a) + j2(p, a))); };
  }
  Kernel::HessianFn hess;
  if (k.hessian_fn()) {
    auto h1 = k.hessian_fn(), h2 = sw.hessian_fn();
    hess = [h1, h2](const Points& p, const Vec& a) {
      auto A = h1(p, a);
      auto B = h2(p, a);
      for (std::size_t c = 0; c < A.size(); ++c) A[c] = 0.5 * (A[c] + B[c]);
      return A;
    };
  }
  Kernel r(k.out_dim(), k.slots(), value, jac, hess);
  r.declare_symmetric();
  return r;
}

struct Probe {
  Points points;
  Vec args;
};

/// Max |f(p, a) - f(swap p, swap a)| over the given probes.
inline double check_symmetry(const Kernel& k, const SwapSpec& s,
                             const std::vector<Probe>& probes) {
  if (k.is_zero()) return 0.0;
  auto perm = detail::swap_permutation(k, s);
  double r = 0;
  for (const auto& pr : probes) {
    Vec d = k.value(pr.points, pr.args) -
            k.value(detail::swap_points(pr.points, s), detail::permute(pr.args, perm));
    r = std::max(r, d.cwiseAbs().maxCoeff());
  }
  return r;
}

/// Random probes: points uniform in [0,1]², arguments uniform in [-1,1].
inline std::vector<Probe> random_probes(const Kernel& k, int count,
                                        std::uint64_t seed = 0) {
  if (count < 1) throw ShapeError("check_symmetry: probe count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0), sym(-1.0, 1.0);
  std::vector<Probe> probes;
  for (int c = 0; c < count; ++c) {
    Probe pr;
    for (auto& p : pr.points) p = Point(unit(rng), unit(rng));
    pr.args.resize(k.arg_dim());
    for (Eigen::Index d = 0; d < pr.args.size(); ++d) pr.args(d) = sym(rng);
    probes.push_back(std::move(pr));
  }
  return probes;
}

inline double check_symmetry(const Kernel& k, const SwapSpec& s, int probes,
                             std::uint64_t seed = 0) {
  return check_symmetry(k, s, random_probes(k, probes, seed));
}

/// Fold a causal kernel g(t, s, σ; y1, y2, u1, u2), used only for s >= σ,
/// into the symmetric g̃ with ½∫_0^t∫_0^t g̃ = ∫_0^t∫_0^s g. Off the
/// diagonal g̃(s, σ) is g evaluated with the later time first; on the
/// diagonal the two orderings are averaged.
inline Kernel fold_causal(const Kernel& g) {
  if (g.is_zero()) return g;
  const SwapSpec s = SwapSpec::dynamics();
  Kernel sw = swapped(g, s);
  auto chi = [](const Points& p) {
    const double a = p[1](0), b = p[2](0);
    return a > b ? 1.0 : (a < b ? 0.0 : 0.5);
  };
  auto v1 = g.value_fn(), v2 = sw.value_fn();
  Kernel::ValueFn value = [=](const Points& p, const Vec& a) {
    const double c = chi(p);
    Vec r = Vec::Zero(g.out_dim());
    if (c > 0) r += c * v1(p, a);
    if (c < 1) r += (1 - c) * v2(p, a);
    return r;
  };
  Kernel::JacobianFn jac;
  if (g.jacobian_fn()) {
    auto j1 = g.jacobian_fn(), j2 = sw.jacobian_fn();
    jac = [=](const Points& p, const Vec& a) {
      const double c = chi(p);
      Mat r = Mat::Zero(g.out_dim(), g.arg_dim());
      if (c > 0) r += c * j1(p, a);
      if (c < 1) r += (1 - c) * j2(p, a);
      return r;
    };
  }
  Kernel::HessianFn hess;
  if (g.hessian_fn()) {
    auto h1 = g.hessian_fn(), h2 = sw.hessian_fn();
    hess = [=](const Points& p, const Vec& a) {
      const double c = chi(p);
      std::vector<Mat> r(static_cast<std::size_t>(g.out_dim()), Mat::Zero(g.arg_dim(), g.arg_dim()));
      if (c > 0) {
        auto A = h1(p, a);
        for (std::size_t q = 0; q < r.size(); ++q) r[q] += c * A[q];
      }
      if (c < 1) {
        auto B = h2(p, a);
        for (std::size_t q = 0; q < r.size(); ++q) r[q] += (1 - c) * B[q];
      }
      return r;
    };
  }
  Kernel r(g.out_dim(), g.slots(), value, jac, hess);
  r.declare_symmetric();
  return r;
}

/// A derivative closure of one slot: order 1 returns a single out x slot
/// matrix; order 2 returns one slot x slot matrix per output component.
using DerivativeFn = std::function<std::vector<Mat>(const Points&, const Vec&)>;

/// Finite-difference derivative of `k` in slot `slot`, using the fixed steps
/// of Kernel::fd_jacobian / Kernel::fd_hessian.
inline DerivativeFn fd_derivative(const Kernel& k, int slot, int order) {
  if (slot < 0 || slot >= k.slot_count()) throw ShapeError("fd_derivative: slot");
  if (order != 1 && order != 2) throw ShapeError("fd_derivative: order must be 1 or 2");
  const int o = k.slot_offset(slot), n = k.slot_size(slot);
  if (order == 1)
    return [k, o, n](const Points& p, const Vec& a) {
      return std::vector<Mat>{k.fd_jacobian(p, a).middleCols(o, n)};
    };
  return [k, o, n](const Points& p, const Vec& a) {
    auto H = k.fd_hessian(p, a);
    for (auto& M : H) M = Mat(M.block(o, o, n, n));
    return H;
  };
}

}  // namespace intocp
