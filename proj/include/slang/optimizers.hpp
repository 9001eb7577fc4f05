#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "slang/errors.hpp"
#include "slang/low_rank_plus_diag.hpp"
#include "slang/rng.hpp"

namespace slang {

/// Shared settings for the natural-gradient variational updates. The same
/// config drives the low-rank method and every dense or diagonal baseline so
/// comparisons run under identical schedules.
struct OptimizerConfig {
  double prior_precision = 1.0;  // isotropic Gaussian prior N(0, I/prior_precision)
  Eigen::Index rank = 1;         // number of low-rank factor columns
  Eigen::Index n_total = 1;      // dataset size N used to rescale minibatch sums
  double alpha0 = 0.05;          // mean learning rate
  double beta0 = 0.05;           // precision learning rate
  double decay_exponent = 0.51;
  bool decay = true;
  double momentum = 0.9;  // heavy-ball coefficient on the mean update
  int mc_samples = 12;    // parameter draws averaged per gradient estimate
  int eig_oversample = 2;
  int eig_power_iters = 3;

  void validate() const {
    if (!(prior_precision > 0.0)) throw config_error("prior precision must be positive");
    if (rank < 0) throw config_error("rank must be non-negative");
    if (n_total < 1) throw config_error("dataset size must be positive");
    if (!(alpha0 > 0.0)) throw config_error("mean learning rate must be positive");
    if (!(beta0 > 0.0) || beta0 > 1.0)
      throw config_error("precision learning rate must lie in (0, 1]");
    if (!(momentum >= 0.0) || momentum >= 1.0) throw config_error("momentum must lie in [0, 1)");
    if (mc_samples < 1) throw config_error("sample count must be positive");
    if (!(decay_exponent >= 0.0)) throw config_error("decay exponent must be non-negative");
    if (eig_oversample < 0 || eig_power_iters < 0)
      throw config_error("sketch parameters must be non-negative");
  }
};

/// Step-size schedule base / (1 + t^exponent) for step index t >= 1.
inline double learning_rate(double base, const OptimizerConfig& cfg, long t) {
  if (!cfg.decay) return base;
  return base / (1.0 + std::pow(static_cast<double>(t), cfg.decay_exponent));
}

/// Gaussian posterior iterate with a factored precision.
struct GaussianState {
  Eigen::VectorXd mean;
  LowRankDiagMatrix precision;
  Eigen::VectorXd momentum;
  long step = 0;
};

/// Gaussian posterior iterate with an explicit precision matrix, used by the
/// dense reference methods at small dimension.
struct DenseGaussianState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
  Eigen::VectorXd momentum;
  long step = 0;
};

inline GaussianState init_state(const OptimizerConfig& cfg, Eigen::Index dim) {
  cfg.validate();
  if (dim < 1) throw config_error("state dimension must be positive");
  if (cfg.rank > dim)
    throw config_error("rank " + std::to_string(cfg.rank) + " exceeds parameter dimension " +
                       std::to_string(dim));
  return GaussianState{
      Eigen::VectorXd::Zero(dim),
      LowRankDiagMatrix(Eigen::MatrixXd::Zero(dim, cfg.rank),
                        Eigen::VectorXd::Constant(dim, cfg.prior_precision)),
      Eigen::VectorXd::Zero(dim), 0};
}

inline DenseGaussianState init_dense_state(const OptimizerConfig& cfg, Eigen::Index dim) {
  cfg.validate();
  if (dim < 1) throw config_error("state dimension must be positive");
  if (dim > kDenseDimensionLimit)
    throw config_error("dense state of dimension " + std::to_string(dim) + " refused");
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(dim, dim);
  p.diagonal().setConstant(cfg.prior_precision);
  return DenseGaussianState{Eigen::VectorXd::Zero(dim), std::move(p), Eigen::VectorXd::Zero(dim),
                            0};
}

namespace detail {

inline void check_grads(const Eigen::MatrixXd& grads, Eigen::Index dim) {
  if (grads.rows() < 1) throw config_error("optimizer step requires at least one gradient row");
  if (grads.cols() != dim)
    throw config_error("gradient width " + std::to_string(grads.cols()) +
                       " does not match state dimension " + std::to_string(dim));
  if (!grads.allFinite()) throw numeric_error("optimizer step received non-finite gradients");
}

/// Gradient of the regularized objective at the current mean: the rows of
/// `grads` are per-example log-likelihood gradients, so their rescaled sum
/// enters with a minus sign.
inline Eigen::VectorXd descent_direction(const OptimizerConfig& cfg, const Eigen::MatrixXd& grads,
                                         const Eigen::VectorXd& mean, double scale_nm) {
  return -scale_nm * grads.colwise().sum().transpose() + cfg.prior_precision * mean;
}

inline void apply_mean_update(Eigen::VectorXd& mean, Eigen::VectorXd& momentum,
                              const OptimizerConfig& cfg, const Eigen::VectorXd& natural_step,
                              double alpha) {
  momentum = cfg.momentum * momentum + natural_step;
  mean -= alpha * momentum;
  if (!mean.allFinite()) throw divergence_error("mean update produced non-finite values");
}

}  // namespace detail

/// One update of the low-rank plus diagonal posterior. `grads` holds one row
/// per minibatch example with the gradient of that example's log-likelihood,
/// already averaged over parameter draws by the caller. The minibatch
/// curvature is mixed into the factor through a sketched eigendecomposition
/// and the truncated remainder moves into the diagonal, which keeps the total
/// precision diagonal exact.
inline void slang_step(GaussianState& s, const OptimizerConfig& cfg, const Eigen::MatrixXd& grads,
                       RngStream& rng) {
  cfg.validate();
  const Eigen::Index dim = s.mean.size();
  const Eigen::Index rank = s.precision.rank();
  const Eigen::Index m = grads.rows();
  detail::check_grads(grads, dim);

  const long t = s.step + 1;
  const double alpha = learning_rate(cfg.alpha0, cfg, t);
  const double beta = learning_rate(cfg.beta0, cfg, t);
  const double nm = static_cast<double>(cfg.n_total) / static_cast<double>(m);

  Eigen::MatrixXd cols(dim, rank + m);
  cols.leftCols(rank) = std::sqrt(1.0 - beta) * s.precision.u();
  cols.rightCols(m) = std::sqrt(beta * nm) * grads.transpose();
  EigPair eig = fast_eig(cols, rank, rng, cfg.eig_oversample, cfg.eig_power_iters);
  Eigen::MatrixXd u1 = eig.vectors * eig.values.cwiseSqrt().asDiagonal();

  Eigen::VectorXd d1 = (1.0 - beta) * s.precision.diag();
  d1.array() += beta * cfg.prior_precision;
  d1 += diag_of_outer(cols) - diag_of_outer(u1);
  if (!u1.allFinite() || !d1.allFinite())
    throw divergence_error("precision update produced non-finite values");
  if ((d1.array() <= 0.0).any()) throw divergence_error("precision diagonal lost positivity");
  LowRankDiagMatrix prec(std::move(u1), std::move(d1));

  Eigen::VectorXd natural_step =
      woodbury_solve(prec, detail::descent_direction(cfg, grads, s.mean, nm));
  detail::apply_mean_update(s.mean, s.momentum, cfg, natural_step, alpha);
  s.precision = std::move(prec);
  s.step = t;
}

namespace detail {

/// Diagonal-precision update shared by the empirical-Fisher and explicit
/// curvature variants. `curvature_sum` is the unscaled minibatch sum of
/// per-example positive curvature diagonals.
inline void diagonal_step(GaussianState& s, const OptimizerConfig& cfg,
                          const Eigen::MatrixXd& grads, const Eigen::VectorXd& curvature_sum) {
  cfg.validate();
  const Eigen::Index dim = s.mean.size();
  if (s.precision.rank() != 0)
    throw config_error("diagonal update requires a state without a low-rank part");
  check_grads(grads, dim);
  if (curvature_sum.size() != dim) throw config_error("curvature diagonal has the wrong size");

  const long t = s.step + 1;
  const double alpha = learning_rate(cfg.alpha0, cfg, t);
  const double beta = learning_rate(cfg.beta0, cfg, t);
  const double nm = static_cast<double>(cfg.n_total) / static_cast<double>(grads.rows());

  Eigen::VectorXd d1 =
      (1.0 - beta) * s.precision.diag() +
      beta * (nm * curvature_sum + Eigen::VectorXd::Constant(dim, cfg.prior_precision));
  if (!d1.allFinite()) throw divergence_error("precision update produced non-finite values");
  if ((d1.array() <= 0.0).any()) throw divergence_error("precision diagonal lost positivity");

  Eigen::VectorXd natural_step =
      (descent_direction(cfg, grads, s.mean, nm).array() / d1.array()).matrix();
  apply_mean_update(s.mean, s.momentum, cfg, natural_step, alpha);
  s.precision = LowRankDiagMatrix::diagonal(std::move(d1));
  s.step = t;
}

}  // namespace detail

/// Fully factorized update with empirical-Fisher curvature.
inline void mean_field_step(GaussianState& s, const OptimizerConfig& cfg,
                            const Eigen::MatrixXd& grads) {
  detail::diagonal_step(s, cfg, grads,
                        grads.array().square().colwise().sum().matrix().transpose());
}

/// Fully factorized update with caller-supplied curvature, e.g. the exact
/// Hessian diagonal of the negative log-likelihood summed over the minibatch.
inline void mean_field_step(GaussianState& s, const OptimizerConfig& cfg,
                            const Eigen::MatrixXd& grads, const Eigen::VectorXd& curvature_sum) {
  detail::diagonal_step(s, cfg, grads, curvature_sum);
}

namespace detail {

inline void dense_step(DenseGaussianState& s, const OptimizerConfig& cfg,
                       const Eigen::MatrixXd& grads, const Eigen::MatrixXd& curvature_sum) {
  cfg.validate();
  const Eigen::Index dim = s.mean.size();
  check_grads(grads, dim);
  if (curvature_sum.rows() != dim || curvature_sum.cols() != dim)
    throw config_error("curvature matrix has the wrong size");

  const long t = s.step + 1;
  const double alpha = learning_rate(cfg.alpha0, cfg, t);
  const double beta = learning_rate(cfg.beta0, cfg, t);
  const double nm = static_cast<double>(cfg.n_total) / static_cast<double>(grads.rows());

  Eigen::MatrixXd p1 = (1.0 - beta) * s.precision + (beta * nm) * curvature_sum;
  p1.diagonal().array() += beta * cfg.prior_precision;
  p1 = 0.5 * (p1 + p1.transpose()).eval();
  if (!p1.allFinite()) throw divergence_error("precision update produced non-finite values");
  Eigen::LLT<Eigen::MatrixXd> llt(p1);
  if (llt.info() != Eigen::Success)
    throw divergence_error("dense precision is not positive definite");

  Eigen::VectorXd natural_step = llt.solve(descent_direction(cfg, grads, s.mean, nm));
  apply_mean_update(s.mean, s.momentum, cfg, natural_step, alpha);
  s.precision = std::move(p1);
  s.step = t;
}

}  // namespace detail

/// Dense reference update with empirical-Fisher curvature; identical in exact
/// arithmetic to the low-rank method run at full rank.
inline void vogn_full_step(DenseGaussianState& s, const OptimizerConfig& cfg,
                           const Eigen::MatrixXd& grads) {
  detail::dense_step(s, cfg, grads, grads.transpose() * grads);
}

/// Dense reference update with an explicit curvature matrix, the unscaled
/// minibatch sum of per-example Hessians of the negative log-likelihood.
inline void von_full_step(DenseGaussianState& s, const OptimizerConfig& cfg,
                          const Eigen::MatrixXd& grads, const Eigen::MatrixXd& hessian_sum) {
  detail::dense_step(s, cfg, grads, 0.5 * (hessian_sum + hessian_sum.transpose()));
}

/// Baseline that decomposes the minibatch curvature alone and tracks factor
/// and diagonal by moving averages. Requires a minibatch at least as large as
/// the rank.
inline void online_eig_step(GaussianState& s, const OptimizerConfig& cfg,
                            const Eigen::MatrixXd& grads, RngStream& rng) {
  cfg.validate();
  const Eigen::Index dim = s.mean.size();
  const Eigen::Index rank = s.precision.rank();
  detail::check_grads(grads, dim);

  const long t = s.step + 1;
  const double alpha = learning_rate(cfg.alpha0, cfg, t);
  const double beta = learning_rate(cfg.beta0, cfg, t);
  const double nm = static_cast<double>(cfg.n_total) / static_cast<double>(grads.rows());

  Eigen::MatrixXd cols = std::sqrt(nm) * grads.transpose();
  EigPair eig = fast_eig(cols, rank, rng, cfg.eig_oversample, cfg.eig_power_iters);
  Eigen::MatrixXd proj = eig.vectors * eig.values.cwiseSqrt().asDiagonal();

  Eigen::MatrixXd u1 = (1.0 - beta) * s.precision.u() + beta * proj;
  Eigen::VectorXd d1 =
      (1.0 - beta) * s.precision.diag() +
      beta * (diag_of_outer(cols) - diag_of_outer(proj) +
              Eigen::VectorXd::Constant(dim, cfg.prior_precision));
  if (!u1.allFinite() || !d1.allFinite())
    throw divergence_error("precision update produced non-finite values");
  if ((d1.array() <= 0.0).any()) throw divergence_error("precision diagonal lost positivity");
  LowRankDiagMatrix prec(std::move(u1), std::move(d1));

  Eigen::VectorXd natural_step =
      woodbury_solve(prec, detail::descent_direction(cfg, grads, s.mean, nm));
  detail::apply_mean_update(s.mean, s.momentum, cfg, natural_step, alpha);
  s.precision = std::move(prec);
  s.step = t;
}

}  // namespace slang
