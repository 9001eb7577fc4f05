#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "slang/errors.hpp"
#include "slang/rng.hpp"

namespace slang {

/// Largest dimension for which dense D x D fallbacks (full covariances,
/// full-Gaussian baselines) are permitted.
inline constexpr Eigen::Index kDenseDimensionLimit = 2000;

/// Symmetric positive definite matrix in the structured form U U^T + diag(d),
/// with U of shape D x L (L may be 0) and d strictly positive. Value type;
/// immutable after construction. Every operation on it runs in O(D L^2) or
/// better, never materializing a D x D matrix.
class LowRankDiagMatrix {
 public:
  LowRankDiagMatrix(Eigen::MatrixXd u, Eigen::VectorXd d) : u_(std::move(u)), d_(std::move(d)) {
    if (u_.rows() != d_.size())
      throw config_error("LowRankDiagMatrix: U has " + std::to_string(u_.rows()) +
                         " rows but diag has " + std::to_string(d_.size()) + " entries");
    if (u_.cols() > u_.rows())
      throw config_error("LowRankDiagMatrix: rank " + std::to_string(u_.cols()) +
                         " exceeds dimension " + std::to_string(u_.rows()));
    if (!u_.allFinite() || !d_.allFinite())
      throw config_error("LowRankDiagMatrix: non-finite entries");
    if (d_.size() == 0 || !(d_.array() > 0.0).all())
      throw config_error("LowRankDiagMatrix: diagonal must be strictly positive");
  }

  /// Purely diagonal matrix (L = 0).
  static LowRankDiagMatrix diagonal(Eigen::VectorXd d) {
    const Eigen::Index n = d.size();
    return LowRankDiagMatrix(Eigen::MatrixXd(n, 0), std::move(d));
  }

  Eigen::Index dim() const { return d_.size(); }
  Eigen::Index rank() const { return u_.cols(); }
  const Eigen::MatrixXd& u() const { return u_; }
  const Eigen::VectorXd& diag() const { return d_; }

  /// Materializes U U^T + diag(d). Intended for small problems only.
  Eigen::MatrixXd dense() const {
    if (dim() > kDenseDimensionLimit)
      throw config_error("dense(): dimension " + std::to_string(dim()) + " exceeds the limit " +
                         std::to_string(kDenseDimensionLimit));
    Eigen::MatrixXd a = u_ * u_.transpose();
    a.diagonal() += d_;
    return a;
  }

 private:
  Eigen::MatrixXd u_;
  Eigen::VectorXd d_;
};

/// Top eigenpairs of a symmetric PSD matrix: orthonormal columns in
/// `vectors`, matching `values` sorted descending, all non-negative.
struct EigPair {
  Eigen::MatrixXd vectors;
  Eigen::VectorXd values;
};

struct LogDetTrace {
  double logdet = 0.0;
  double trace_inverse = 0.0;
};

/// Row-wise squared sums: the diagonal of U U^T without forming it.
/// Summation runs left to right across columns, so the result does not
/// depend on threading.
inline Eigen::VectorXd diag_of_outer(const Eigen::MatrixXd& u) {
  return u.array().square().rowwise().sum();
}

namespace detail {

// I_L + U^T diag(d)^{-1} U, factored. The matrix is SPD for any U (identity
// plus a Gram matrix), so a Cholesky breakdown means NaN/Inf contamination.
struct CapacitanceFactor {
  Eigen::MatrixXd w;  // diag(d)^{-1} U
  Eigen::LLT<Eigen::MatrixXd> llt;
};

inline CapacitanceFactor factor_capacitance(const LowRankDiagMatrix& a, const char* who) {
  CapacitanceFactor f;
  f.w = a.u().array().colwise() / a.diag().array();
  Eigen::MatrixXd s =
      Eigen::MatrixXd::Identity(a.rank(), a.rank()) + a.u().transpose() * f.w;
  if (!s.allFinite()) throw numeric_error(std::string(who) + ": non-finite inner system");
  f.llt.compute(s);
  if (f.llt.info() != Eigen::Success)
    throw numeric_error(std::string(who) + ": inner Cholesky failed; inputs are contaminated");
  return f;
}

inline Eigen::MatrixXd thin_q(const Eigen::MatrixXd& y) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
  return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

}  // namespace detail

/// Solves (U U^T + diag(d)) x = g through the matrix inversion lemma:
/// x = d^{-1} g - d^{-1} U (I + U^T d^{-1} U)^{-1} U^T d^{-1} g.
inline Eigen::MatrixXd woodbury_solve(const LowRankDiagMatrix& a, const Eigen::MatrixXd& g) {
  if (g.rows() != a.dim()) throw config_error("woodbury_solve: right-hand side has wrong length");
  Eigen::MatrixXd dinv_g = g.array().colwise() / a.diag().array();
  if (a.rank() == 0) return dinv_g;
  auto f = detail::factor_capacitance(a, "woodbury_solve");
  return dinv_g - f.w * f.llt.solve(a.u().transpose() * dinv_g);
}

inline Eigen::VectorXd woodbury_solve(const LowRankDiagMatrix& a, const Eigen::VectorXd& g) {
  return woodbury_solve(a, Eigen::MatrixXd(g)).col(0);
}

/// Applies a square-root factor B of the INVERSE of the represented matrix:
/// returns B eps with B B^T = (U U^T + diag(d))^{-1}, in O(D L^2) and without
/// any D x D intermediate.
///
/// Construction: with V = d^{-1/2} (x) U and M = V^T V, take the lower
/// Cholesky factors A A^T = M and B B^T = I + A^T A; then
/// W = I + V [A^{-T} (B - I) A^{-1}] V^T satisfies W W^T = I + V V^T, and the
/// factor applied here is d^{-1/2} (x) W^{-T}, expanded by the inversion
/// lemma so only L x L systems are solved.
///
/// Exactly-zero columns of U contribute nothing to U U^T and are dropped
/// before factoring (they arise routinely from clamped eigenvalues).
/// Linearly dependent nonzero columns make V^T V singular and raise
/// numeric_error.
inline Eigen::VectorXd symmetric_factor_apply(const LowRankDiagMatrix& a,
                                              const Eigen::VectorXd& eps) {
  if (eps.size() != a.dim())
    throw config_error("symmetric_factor_apply: noise vector has wrong length");
  const Eigen::ArrayXd root_d = a.diag().array().sqrt();

  Eigen::Index live = 0;
  for (Eigen::Index j = 0; j < a.rank(); ++j)
    if (!a.u().col(j).isZero(0.0)) ++live;
  if (live == 0) return eps.array() / root_d;

  Eigen::MatrixXd v(a.dim(), live);
  for (Eigen::Index j = 0, k = 0; j < a.rank(); ++j)
    if (!a.u().col(j).isZero(0.0)) v.col(k++) = a.u().col(j).array() / root_d;

  const Eigen::MatrixXd m = v.transpose() * v;
  Eigen::LLT<Eigen::MatrixXd> llt_m(m);
  if (llt_m.info() != Eigen::Success)
    throw numeric_error("symmetric_factor_apply: columns of U are linearly dependent");
  const Eigen::MatrixXd af = llt_m.matrixL();
  const Eigen::MatrixXd p =
      Eigen::MatrixXd::Identity(live, live) + af.transpose() * af;
  Eigen::LLT<Eigen::MatrixXd> llt_p(p);
  if (llt_p.info() != Eigen::Success)
    throw numeric_error("symmetric_factor_apply: inner Cholesky failed");
  const Eigen::MatrixXd bf = llt_p.matrixL();

  // C = A^{-T} (B - I) A^{-1}; its inverse transpose A (B - I)^{-T} A^T
  // feeds the inversion-lemma form of W^{-T}.
  Eigen::MatrixXd b_shift = bf - Eigen::MatrixXd::Identity(live, live);
  Eigen::MatrixXd w_inv_t = b_shift.triangularView<Eigen::Lower>()
                                .solve(Eigen::MatrixXd::Identity(live, live))
                                .transpose();
  Eigen::MatrixXd c_inv_t = af * w_inv_t * af.transpose();
  Eigen::PartialPivLU<Eigen::MatrixXd> k(c_inv_t + m);
  if (!k.matrixLU().allFinite())
    throw numeric_error("symmetric_factor_apply: degenerate small system");

  Eigen::VectorXd y = eps - v * k.solve(v.transpose() * eps);
  return y.array() / root_d;
}

/// One draw from N(mean, (U U^T + diag(d))^{-1}). Consumes dim() normals
/// from the stream, then applies the symmetric factor.
inline Eigen::VectorXd sample_gaussian(const Eigen::VectorXd& mean, const LowRankDiagMatrix& a,
                                       RngStream& rng) {
  if (mean.size() != a.dim()) throw config_error("sample_gaussian: mean has wrong length");
  Eigen::VectorXd eps(a.dim());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
  return mean + symmetric_factor_apply(a, eps);
}

/// log det(U U^T + diag(d)) and tr((U U^T + diag(d))^{-1}), both via the
/// determinant lemma / inversion lemma on the shared L x L factorization.
inline LogDetTrace logdet_and_trace_inverse(const LowRankDiagMatrix& a) {
  LogDetTrace out;
  out.logdet = a.diag().array().log().sum();
  out.trace_inverse = a.diag().array().inverse().sum();
  if (a.rank() == 0) return out;
  auto f = detail::factor_capacitance(a, "logdet_and_trace_inverse");
  const Eigen::MatrixXd l = f.llt.matrixL();
  out.logdet += 2.0 * l.diagonal().array().log().sum();
  out.trace_inverse -= (f.w.array() * f.llt.solve(f.w.transpose()).transpose().array()).sum();
  return out;
}

/// Marginal variances: the diagonal of (U U^T + diag(d))^{-1}, in O(D L^2).
inline Eigen::VectorXd inverse_diagonal(const LowRankDiagMatrix& a) {
  Eigen::VectorXd out = a.diag().array().inverse();
  if (a.rank() == 0) return out;
  auto f = detail::factor_capacitance(a, "inverse_diagonal");
  out -= (f.w.array() * f.llt.solve(f.w.transpose()).transpose().array()).rowwise().sum().matrix();
  return out;
}

/// Top-l eigenpairs of sum_j c_j c_j^T for the given columns c_j, by a
/// randomized range finder: a Gaussian sketch of width l + oversample,
/// `power_iters` QR-stabilized power iterations, then an exact
/// eigendecomposition in the sketched subspace. Cost O(D l |columns|).
///
/// When the numerical rank r is below l, the result is padded: the last
/// l - r eigenvalues are 0 and their vectors complete the orthonormal set.
/// Tiny negative Ritz values (roundoff) are clamped to 0. The vectors are
/// re-orthonormalized by a final QR pass, sign-aligned for determinism.
inline EigPair fast_eig(const Eigen::MatrixXd& columns, Eigen::Index l, RngStream& rng,
                        Eigen::Index oversample = 2, int power_iters = 3) {
  const Eigen::Index dim = columns.rows();
  const Eigen::Index m = columns.cols();
  if (m < 1) throw config_error("fast_eig: need at least one column");
  if (l < 0 || l > std::min(dim, m))
    throw config_error("fast_eig: requested rank " + std::to_string(l) +
                       " outside [0, min(dim, columns)]");
  if (oversample < 0 || power_iters < 0) throw config_error("fast_eig: negative parameters");
  if (l == 0) return EigPair{Eigen::MatrixXd(dim, 0), Eigen::VectorXd(0)};

  const Eigen::Index w = std::min(l + oversample, dim);
  Eigen::MatrixXd omega(dim, w);
  for (Eigen::Index j = 0; j < w; ++j)
    for (Eigen::Index i = 0; i < dim; ++i) omega(i, j) = rng.normal();

  Eigen::MatrixXd q = detail::thin_q(columns * (columns.transpose() * omega));
  for (int it = 0; it < power_iters; ++it)
    q = detail::thin_q(columns * (columns.transpose() * q));

  // Projected matrix as a Gram product, PSD by construction.
  const Eigen::MatrixXd g = columns.transpose() * q;  // m x w
  Eigen::MatrixXd t = g.transpose() * g;
  t = 0.5 * (t + t.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
  if (es.info() != Eigen::Success) throw numeric_error("fast_eig: projected eigensolve failed");

  EigPair out;
  out.values = es.eigenvalues().tail(l).reverse().cwiseMax(0.0);
  Eigen::MatrixXd ritz = q * es.eigenvectors().rightCols(l).rowwise().reverse();
  Eigen::MatrixXd v = detail::thin_q(ritz);
  for (Eigen::Index j = 0; j < l; ++j)
    if (v.col(j).dot(ritz.col(j)) < 0.0) v.col(j) = -v.col(j);
  out.vectors = std::move(v);
  return out;
}

}  // namespace slang
