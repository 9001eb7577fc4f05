#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "slang/dataset.hpp"
#include "slang/errors.hpp"
#include "slang/low_rank_plus_diag.hpp"
#include "slang/models.hpp"
#include "slang/optimizers.hpp"
#include "slang/rng.hpp"

namespace slang {

/// Mean and covariance in explicit form, for reporting and for divergence
/// computations between fitted posteriors.
struct DenseGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  DenseGaussian(Eigen::VectorXd mu, Eigen::MatrixXd cov)
      : mean(std::move(mu)), covariance(std::move(cov)) {
    if (covariance.rows() != covariance.cols() || covariance.rows() != mean.size() ||
        mean.size() == 0)
      throw config_error("Gaussian mean and covariance sizes disagree");
    if (!mean.allFinite() || !covariance.allFinite())
      throw config_error("Gaussian moments must be finite");
    const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw config_error("covariance is not symmetric");
    if (Eigen::LLT<Eigen::MatrixXd>(covariance).info() != Eigen::Success)
      throw numeric_error("covariance is not positive definite");
  }
};

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> covariance_chol(const DenseGaussian& g) {
  Eigen::LLT<Eigen::MatrixXd> llt(g.covariance);
  if (llt.info() != Eigen::Success)
    throw numeric_error("covariance is not positive definite");
  return llt;
}

inline double chol_logdet(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// KL(from || to) between Gaussians in moment form.
inline double kl_divergence(const DenseGaussian& from, const DenseGaussian& to) {
  if (from.mean.size() != to.mean.size())
    throw config_error("KL divergence requires Gaussians of equal dimension");
  const Eigen::Index dim = from.mean.size();
  auto to_llt = detail::covariance_chol(to);
  auto from_llt = detail::covariance_chol(from);
  const double trace = to_llt.solve(from.covariance).trace();
  const Eigen::VectorXd dm = to.mean - from.mean;
  const double quad = dm.dot(to_llt.solve(dm));
  const double logdet = detail::chol_logdet(to_llt) - detail::chol_logdet(from_llt);
  return 0.5 * (trace + quad - static_cast<double>(dim) + logdet);
}

inline double symmetric_kl(const DenseGaussian& a, const DenseGaussian& b) {
  return kl_divergence(a, b) + kl_divergence(b, a);
}

/// KL(q || prior) for q with factored precision and prior N(0, I/lambda),
/// computed without forming any dense matrix.
inline double kl_to_prior(const GaussianState& s, double prior_precision) {
  if (!(prior_precision > 0.0)) throw config_error("prior precision must be positive");
  const auto dim = static_cast<double>(s.mean.size());
  LogDetTrace lt = logdet_and_trace_inverse(s.precision);
  return 0.5 * (prior_precision * (lt.trace_inverse + s.mean.squaredNorm()) - dim -
                dim * std::log(prior_precision) + lt.logdet);
}

/// Marginal posterior variances, the diagonal of the implied covariance.
inline Eigen::VectorXd posterior_variances(const GaussianState& s) {
  return inverse_diagonal(s.precision);
}

inline DenseGaussian densify(const GaussianState& s) {
  Eigen::MatrixXd p = s.precision.dense();
  Eigen::MatrixXd cov =
      Eigen::LLT<Eigen::MatrixXd>(p).solve(Eigen::MatrixXd::Identity(p.rows(), p.cols()));
  cov = 0.5 * (cov + cov.transpose()).eval();
  return DenseGaussian(s.mean, std::move(cov));
}

inline DenseGaussian densify(const DenseGaussianState& s) {
  Eigen::MatrixXd cov = Eigen::LLT<Eigen::MatrixXd>(s.precision)
                            .solve(Eigen::MatrixXd::Identity(s.precision.rows(),
                                                             s.precision.cols()));
  cov = 0.5 * (cov + cov.transpose()).eval();
  return DenseGaussian(s.mean, std::move(cov));
}

/// KL(q || prior) for q given by an explicit precision matrix.
inline double kl_to_prior(const DenseGaussianState& s, double prior_precision) {
  if (!(prior_precision > 0.0)) throw config_error("prior precision must be positive");
  const auto dim = static_cast<double>(s.mean.size());
  Eigen::LLT<Eigen::MatrixXd> llt(s.precision);
  if (llt.info() != Eigen::Success) throw numeric_error("precision is not positive definite");
  const double trace_inverse =
      llt.solve(Eigen::MatrixXd::Identity(s.mean.size(), s.mean.size())).trace();
  return 0.5 * (prior_precision * (trace_inverse + s.mean.squaredNorm()) - dim -
                dim * std::log(prior_precision) + detail::chol_logdet(llt));
}

namespace detail {

inline void check_metric_inputs(const Model& model, const Dataset& data, Eigen::Index state_dim,
                                int samples) {
  if (samples < 1) throw config_error("metric evaluation needs at least one sample");
  if (model.parameter_dim(data.d()) != state_dim)
    throw config_error("state dimension does not match the model on this dataset");
  if (data.n() == 0) throw config_error("metric evaluation needs a non-empty dataset");
}

/// Draw from N(mean, P^-1) given the Cholesky factorization P = L L^T, via
/// mean + L^-T eps.
inline Eigen::VectorXd sample_from_precision_chol(const Eigen::VectorXd& mean,
                                                  const Eigen::LLT<Eigen::MatrixXd>& llt,
                                                  RngStream& rng) {
  Eigen::VectorXd eps(mean.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
  return mean + llt.matrixU().solve(eps);
}

}  // namespace detail

/// Monte Carlo estimate of the negative evidence lower bound per example:
/// (KL(q || prior) - E_q[sum_i log p(y_i | x_i, theta)]) / n.
inline double negative_elbo(const Model& model, const Dataset& data, const GaussianState& s,
                            double prior_precision, int samples, RngStream& rng) {
  detail::check_metric_inputs(model, data, s.mean.size(), samples);
  double total = 0.0;
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd theta = sample_gaussian(s.mean, s.precision, rng);
    total += model_log_likelihoods(model, theta, data.features, data.targets).sum();
  }
  const double avg_loglik = total / samples;
  return (kl_to_prior(s, prior_precision) - avg_loglik) / static_cast<double>(data.n());
}

inline double negative_elbo(const Model& model, const Dataset& data, const DenseGaussianState& s,
                            double prior_precision, int samples, RngStream& rng) {
  detail::check_metric_inputs(model, data, s.mean.size(), samples);
  Eigen::LLT<Eigen::MatrixXd> llt(s.precision);
  if (llt.info() != Eigen::Success) throw numeric_error("precision is not positive definite");
  double total = 0.0;
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd theta = detail::sample_from_precision_chol(s.mean, llt, rng);
    total += model_log_likelihoods(model, theta, data.features, data.targets).sum();
  }
  const double avg_loglik = total / samples;
  return (kl_to_prior(s, prior_precision) - avg_loglik) / static_cast<double>(data.n());
}

namespace detail {

inline double average_mixture_nll(const Eigen::MatrixXd& loglik) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    const double m = loglik.col(i).maxCoeff();
    total -= m + std::log((loglik.col(i).array() - m).exp().mean());
  }
  return total / static_cast<double>(loglik.cols());
}

}  // namespace detail

/// Average negative log posterior-predictive probability of the targets,
/// where the predictive is a Monte Carlo mixture over parameter draws.
inline double predictive_nll(const Model& model, const Dataset& data, const GaussianState& s,
                             int samples, RngStream& rng) {
  detail::check_metric_inputs(model, data, s.mean.size(), samples);
  Eigen::MatrixXd loglik(samples, data.n());
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd theta = sample_gaussian(s.mean, s.precision, rng);
    loglik.row(k) = model_log_likelihoods(model, theta, data.features, data.targets).transpose();
  }
  return detail::average_mixture_nll(loglik);
}

inline double predictive_nll(const Model& model, const Dataset& data, const DenseGaussianState& s,
                             int samples, RngStream& rng) {
  detail::check_metric_inputs(model, data, s.mean.size(), samples);
  Eigen::LLT<Eigen::MatrixXd> llt(s.precision);
  if (llt.info() != Eigen::Success) throw numeric_error("precision is not positive definite");
  Eigen::MatrixXd loglik(samples, data.n());
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd theta = detail::sample_from_precision_chol(s.mean, llt, rng);
    loglik.row(k) = model_log_likelihoods(model, theta, data.features, data.targets).transpose();
  }
  return detail::average_mixture_nll(loglik);
}

/// Root mean squared error of the Monte Carlo posterior-mean prediction.
inline double rmse(const Model& model, const Dataset& data, const GaussianState& s, int samples,
                   RngStream& rng) {
  detail::check_metric_inputs(model, data, s.mean.size(), samples);
  Eigen::VectorXd pred = Eigen::VectorXd::Zero(data.n());
  for (int k = 0; k < samples; ++k) {
    Eigen::VectorXd theta = sample_gaussian(s.mean, s.precision, rng);
    pred += model_predict(model, theta, data.features);
  }
  pred /= static_cast<double>(samples);
  return std::sqrt((data.targets - pred).squaredNorm() / static_cast<double>(data.n()));
}

}  // namespace slang
