#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "intocp/errors.hpp"

namespace intocp {

using Vec = Eigen::VectorXd;
using CoVec = Eigen::RowVectorXd;
using Mat = Eigen::MatrixXd;

enum class Variance { lower, upper };

/// Upper/lower placement of the three index positions of a Tri3.
struct Signature {
  std::array<Variance, 3> pos{Variance::upper, Variance::upper,
                              Variance::lower};

  /// A_k^{ij}: entries stored at (i, j, k) with i, j upper and k lower.
  static constexpr Signature one_lower_two_upper() {
    return {{Variance::upper, Variance::upper, Variance::lower}};
  }
  /// A_ij^k: entries stored at (i, j, k) with i, j lower and k upper.
  static constexpr Signature two_lower_one_upper() {
    return {{Variance::lower, Variance::lower, Variance::upper}};
  }

  Signature flipped() const {
    Signature s = *this;
    for (auto& v : s.pos)
      v = v == Variance::upper ? Variance::lower : Variance::upper;
    return s;
  }

  /// Position of the index whose variance differs from the other two, or -1.
  int odd_position() const {
    for (int p = 0; p < 3; ++p)
      if (pos[(p + 1) % 3] == pos[(p + 2) % 3] && pos[p] != pos[(p + 1) % 3])
        return p;
    return -1;
  }

  bool operator==(const Signature&) const = default;
};

/// Dense three-index array, row-major in (i, j, k), with a variance tag.
/// Indices are 0-based: the 1-based A_1^{11} is entry (0, 0, 0).
class Tri3 {
 public:
  using Dims = std::array<Eigen::Index, 3>;

  Tri3() : Tri3(Dims{0, 0, 0}) {}
  explicit Tri3(Dims dims,
                Signature sig = Signature::one_lower_two_upper())
      : dims_(dims), sig_(sig), data_(static_cast<std::size_t>(
                                          dims[0] * dims[1] * dims[2]),
                                      0.0) {
    for (auto d : dims)
      if (d < 0) throw ShapeError("Tri3: negative dimension");
  }

  const Dims& dims() const { return dims_; }
  Eigen::Index dim(int p) const { return dims_[static_cast<std::size_t>(p)]; }
  const Signature& signature() const { return sig_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    return data_[offset(i, j, k)];
  }
  double operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return data_[offset(i, j, k)];
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool operator==(const Tri3& o) const {
    return dims_ == o.dims_ && sig_ == o.sig_ && data_ == o.data_;
  }

  Tri3& operator+=(const Tri3& o) {
    if (dims_ != o.dims_) throw ShapeError("Tri3 +=: dimension mismatch");
    for (std::size_t a = 0; a < data_.size(); ++a) data_[a] += o.data_[a];
    return *this;
  }
  Tri3& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

 private:
  std::size_t offset(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return static_cast<std::size_t>((i * dims_[1] + j) * dims_[2] + k);
  }

  Dims dims_;
  Signature sig_;
  std::vector<double> data_;
};

inline Tri3 operator+(Tri3 a, const Tri3& b) { return a += b; }
inline Tri3 operator*(double s, Tri3 a) { return a *= s; }

enum class Transposition {
  plus,         // T+
  minus,        // T-
  flip,         // T⇕ : same entries, every variance flipped
  swap,         // T↔
  clockwise,    // T↷
  anticlockwise // T↶
};

/// General rearrangement: result(r0, r1, r2) = A(r[source[0]], r[source[1]],
/// r[source[2]]), and the result carries signature `to`.
struct TranspositionDescriptor {
  std::array<int, 3> source{0, 1, 2};
  Signature from = Signature::one_lower_two_upper();
  Signature to = Signature::one_lower_two_upper();

  TranspositionDescriptor inverse() const {
    TranspositionDescriptor inv;
    for (int p = 0; p < 3; ++p)
      inv.source[static_cast<std::size_t>(source[static_cast<std::size_t>(p)])] = p;
    inv.from = to;
    inv.to = from;
    return inv;
  }
};

/// Descriptor of a named transposition applied to a tensor with signature
/// `sig`, which must be A_k^{ij} or A_ij^k.
inline TranspositionDescriptor describe(Transposition t, const Signature& sig) {
  const bool uul = sig == Signature::one_lower_two_upper();
  const bool llu = sig == Signature::two_lower_one_upper();
  if (!uul && !llu)
    throw ShapeError("named transposition needs signature A_k^{ij} or A_ij^k");
  TranspositionDescriptor d;
  d.from = sig;
  d.to = sig;
  switch (t) {
    case Transposition::plus: d.source = {2, 0, 1}; break;
    case Transposition::minus: d.source = {1, 2, 0}; break;
    case Transposition::flip:
      d.source = {0, 1, 2};
      d.to = sig.flipped();
      break;
    case Transposition::swap: d.source = {1, 0, 2}; break;
    case Transposition::clockwise:
      d.source = uul ? std::array<int, 3>{2, 1, 0} : std::array<int, 3>{0, 2, 1};
      break;
    case Transposition::anticlockwise:
      d.source = uul ? std::array<int, 3>{0, 2, 1} : std::array<int, 3>{2, 1, 0};
      break;
  }
  return d;
}

inline Tri3 transpose(const Tri3& a, const TranspositionDescriptor& d) {
  std::array<bool, 3> seen{false, false, false};
  for (int s : d.source) {
    if (s < 0 || s > 2 || seen[static_cast<std::size_t>(s)])
      throw ShapeError("transpose: descriptor is not a permutation");
    seen[static_cast<std::size_t>(s)] = true;
  }
  if (!(d.from == a.signature()))
    throw ShapeError("transpose: descriptor signature does not match tensor");
  Tri3::Dims rd{};
  for (std::size_t p = 0; p < 3; ++p)
    rd[static_cast<std::size_t>(d.source[p])] = a.dims()[p];
  Tri3 r(rd, d.to);
  std::array<Eigen::Index, 3> idx{};
  for (idx[0] = 0; idx[0] < rd[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < rd[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < rd[2]; ++idx[2])
        r(idx[0], idx[1], idx[2]) =
            a(idx[static_cast<std::size_t>(d.source[0])],
              idx[static_cast<std::size_t>(d.source[1])],
              idx[static_cast<std::size_t>(d.source[2])]);
  return r;
}

/// Checked variant: throws ShapeError unless the result has `expected` dims.
inline Tri3 transpose(const Tri3& a, const TranspositionDescriptor& d,
                      const Tri3::Dims& expected) {
  Tri3 r = transpose(a, d);
  if (r.dims() != expected)
    throw ShapeError("transpose: permuted ranges do not match expected dims");
  return r;
}

inline Tri3 transpose(const Tri3& a, Transposition t) {
  return transpose(a, describe(t, a.signature()));
}

/// result(i, j) = u_i v_j
inline Mat tensor_product(const Vec& u, const Vec& v) {
  return u * v.transpose();
}

namespace detail {
/// Positions of the two same-variance indices, in order.
inline std::array<int, 3> act_layout(const Tri3& a) {
  int odd = a.signature().odd_position();
  if (odd < 0) throw ShapeError("act: tensor has no distinguished index");
  std::array<int, 3> lay{};
  int q = 0;
  for (int p = 0; p < 3; ++p)
    if (p != odd) lay[static_cast<std::size_t>(q++)] = p;
  lay[2] = odd;
  return lay;
}
}  // namespace detail

/// Contract one of the paired indices with `w`. Mode 1 contracts the first
/// paired index, mode 2 the second. The result has rows indexed by the odd
/// index and columns by the remaining paired index, so that
/// act(A, u, 1) * v == bilinear(A, u, v).
inline Mat act(const Tri3& a, const Vec& w, int mode) {
  if (mode != 1 && mode != 2) throw ShapeError("act: mode must be 1 or 2");
  auto lay = detail::act_layout(a);
  const int c = lay[static_cast<std::size_t>(mode - 1)];
  const int keep = lay[static_cast<std::size_t>(2 - mode)];
  const int odd = lay[2];
  if (w.size() != a.dim(c)) throw ShapeError("act: operand dimension mismatch");
  Mat r = Mat::Zero(a.dim(odd), a.dim(keep));
  std::array<Eigen::Index, 3> idx{};
  for (idx[0] = 0; idx[0] < a.dim(0); ++idx[0])
    for (idx[1] = 0; idx[1] < a.dim(1); ++idx[1])
      for (idx[2] = 0; idx[2] < a.dim(2); ++idx[2])
        r(idx[static_cast<std::size_t>(odd)], idx[static_cast<std::size_t>(keep)]) +=
            a(idx[0], idx[1], idx[2]) * w(idx[static_cast<std::size_t>(c)]);
  return r;
}

/// bilinear(A, u, v)_i = A_i^{jk} u_j v_k
inline Vec bilinear(const Tri3& a, const Vec& u, const Vec& v) {
  auto lay = detail::act_layout(a);
  if (u.size() != a.dim(lay[0]) || v.size() != a.dim(lay[1]))
    throw ShapeError("bilinear: operand dimension mismatch");
  return act(a, u, 1) * v;
}

/// w A (u ⊗ v)
inline double trilinear(const CoVec& w, const Tri3& a, const Vec& u,
                        const Vec& v) {
  Vec b = bilinear(a, u, v);
  if (w.size() != b.size()) throw ShapeError("trilinear: covector dimension");
  return w * b;
}

}  // namespace intocp
