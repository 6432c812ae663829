#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "intocp/errors.hpp"
#include "intocp/fields.hpp"
#include "intocp/quadrature.hpp"

namespace intocp {

/// A matrix-valued function of two grid nodes, stored as one dense
/// (nodes * rows) x (nodes * cols) matrix; block (i, j) is K(x_i, x_j).
class BlockKernel {
 public:
  BlockKernel() = default;
  BlockKernel(int nodes, int rows, int cols)
      : nodes_(nodes), rows_(rows), cols_(cols),
        data_(Mat::Zero(static_cast<Eigen::Index>(nodes) * rows,
                        static_cast<Eigen::Index>(nodes) * cols)) {}
  BlockKernel(int nodes, int rows, int cols, Mat data)
      : nodes_(nodes), rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.rows() != static_cast<Eigen::Index>(nodes) * rows ||
        data_.cols() != static_cast<Eigen::Index>(nodes) * cols)
      throw ShapeError("BlockKernel: data has the wrong size");
  }

  int nodes() const { return nodes_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const Mat& matrix() const { return data_; }
  Mat& matrix() { return data_; }

  auto block(int i, int j) { return data_.block(i * rows_, j * cols_, rows_, cols_); }
  auto block(int i, int j) const { return data_.block(i * rows_, j * cols_, rows_, cols_); }

  double sup_norm() const { return data_.size() ? data_.cwiseAbs().maxCoeff() : 0.0; }

 private:
  int nodes_ = 0, rows_ = 0, cols_ = 0;
  Mat data_;
};

/// Block-diagonal expansion of per-node weights: diag(w_i I_r).
inline Eigen::VectorXd expand_weights(const Grid& g, int r) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(g.size()) * r);
  for (int i = 0; i < g.size(); ++i) w.segment(static_cast<Eigen::Index>(i) * r, r).setConstant(g.weight(i));
  return w;
}

/// Block-diagonal matrix built from per-node blocks.
inline Mat block_diagonal(const std::vector<Mat>& blocks) {
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    r += b.rows();
    c += b.cols();
  }
  Mat M = Mat::Zero(r, c);
  r = c = 0;
  for (const auto& b : blocks) {
    M.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return M;
}

/// LU solve that refuses numerically singular systems.
class CheckedLU {
 public:
  static constexpr double kMinRcond = 1e-13;

  explicit CheckedLU(const Mat& A, const std::string& what) : lu_(A) {
    rcond_ = A.size() ? lu_.rcond() : 1.0;
    if (!(rcond_ > kMinRcond)) {
      std::string mode;
      if (A.rows() > 0) {
        Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeFullV);
        const Eigen::Index last = svd.singularValues().size() - 1;
        Eigen::VectorXd v = svd.matrixV().col(last);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        mode = "; near-null mode concentrated at unknown " + std::to_string(imax) +
               " (sigma_min = " + std::to_string(svd.singularValues()(last)) + ")";
      }
      throw SingularSystemError(what + ": singular system, rcond = " + std::to_string(rcond_) + mode,
                                rcond_);
    }
  }

  template <typename Rhs>
  Mat solve(const Rhs& b) const { return lu_.solve(b); }
  double rcond() const { return rcond_; }

 private:
  Eigen::PartialPivLU<Mat> lu_;
  double rcond_ = 1.0;
};

enum class Verdict { positive_definite, indefinite, inconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::positive_definite: return "positive-definite";
    case Verdict::indefinite: return "indefinite";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

inline constexpr double kPdThreshold = 1e-10;

inline Verdict classify(double min_eig) {
  if (min_eig > kPdThreshold) return Verdict::positive_definite;
  if (min_eig > -kPdThreshold) return Verdict::inconclusive;
  return Verdict::indefinite;
}

struct PDReport {
  Verdict verdict = Verdict::inconclusive;
  /// Smallest eigenvalue of M(x1, x2) over all node pairs.
  double min_eig_pointwise = 0;
  /// Smallest eigenvalue of the weighted discrete Gram matrix.
  double min_eig_discrete = 0;
  /// Verdicts of the two tests separately.
  Verdict pointwise = Verdict::inconclusive;
  Verdict discrete = Verdict::inconclusive;
};

/// Quadratic form U ↦ Σ w_i U_i R1_i U_i + Σ_ij w_i w_j U_i K_ij U_j.
struct QuadIntegralForm {
  std::vector<Mat> R1;
  BlockKernel K;
  /// Verdict of the last PD check, if any was run.
  std::optional<PDReport> report;

  double value(const Control& U, const Grid& g) const {
    const int m = U.dim();
    double v = 0;
    for (int i = 0; i < g.size(); ++i)
      v += g.weight(i) * U.at(i).dot(R1[static_cast<std::size_t>(i)] * U.at(i));
    Eigen::Map<const Eigen::VectorXd> u(U.values().data(), U.values().size());
    Eigen::VectorXd wu = expand_weights(g, m).cwiseProduct(u);
    return v + wu.dot(K.matrix() * wu);
  }

  /// Matrix G with value(U) = V^T G V for V_i = sqrt(w_i) U_i.
  Mat gram(const Grid& g) const {
    const int m = K.rows();
    Eigen::VectorXd s = expand_weights(g, m).cwiseSqrt();
    Mat G = s.asDiagonal() * K.matrix() * s.asDiagonal();
    G += block_diagonal(R1);
    return 0.5 * (G + G.transpose());
  }
};

namespace detail {

inline void check_form(const QuadIntegralForm& f, const Grid& g) {
  if (static_cast<int>(f.R1.size()) != g.size() || f.K.nodes() != g.size() ||
      f.K.rows() != f.K.cols())
    throw ShapeError("check_pd: form does not match grid");
  const Mat& K = f.K.matrix();
  const double scale = std::max(1.0, K.size() ? K.cwiseAbs().maxCoeff() : 0.0);
  const double asym = K.size() ? (K - K.transpose()).cwiseAbs().maxCoeff() : 0.0;
  if (asym > 1e-10 * scale)
    throw SymmetryError("check_pd: K(x1,x2) != K(x2,x1)^T", asym);
  for (const auto& R : f.R1) {
    const double r = R.size() ? (R - R.transpose()).cwiseAbs().maxCoeff() : 0.0;
    if (r > 1e-10 * std::max(1.0, R.cwiseAbs().maxCoeff()))
      throw SymmetryError("check_pd: R1 is not symmetric", r);
  }
}

inline double min_eig(const Mat& S) {
  if (S.rows() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

}  // namespace detail

/// Pointwise test: M(x1,x2) = [[R1(x1)/|G|, K(x1,x2)], [K(x1,x2)^T, R1(x2)/|G|]]
/// at every node pair, plus the discrete Gram oracle. The verdict follows
/// the pointwise test.
inline PDReport check_pd(QuadIntegralForm& form, const Grid& g) {
  detail::check_form(form, g);
  const int m = form.K.rows();
  const double G = g.measure();
  PDReport r;
  r.min_eig_pointwise = std::numeric_limits<double>::infinity();
  Mat M(2 * m, 2 * m);
  for (int i = 0; i < g.size(); ++i)
    for (int j = i; j < g.size(); ++j) {
      M.topLeftCorner(m, m) = form.R1[static_cast<std::size_t>(i)] / G;
      M.bottomRightCorner(m, m) = form.R1[static_cast<std::size_t>(j)] / G;
      M.topRightCorner(m, m) = form.K.block(i, j);
      M.bottomLeftCorner(m, m) = form.K.block(i, j).transpose();
      r.min_eig_pointwise = std::min(r.min_eig_pointwise, detail::min_eig(M));
    }
  r.min_eig_discrete = detail::min_eig(form.gram(g));
  r.pointwise = classify(r.min_eig_pointwise);
  r.discrete = classify(r.min_eig_discrete);
  r.verdict = r.pointwise;
  form.report = r;
  return r;
}

/// Same tests, but the verdict follows the discrete Gram matrix; the
/// pointwise test is kept as a sufficient screen.
inline PDReport check_pd_gram(QuadIntegralForm& form, const Grid& g) {
  PDReport r = check_pd(form, g);
  r.verdict = r.discrete;
  form.report = r;
  return r;
}

}  // namespace intocp
