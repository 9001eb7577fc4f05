#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "slang/errors.hpp"

namespace slang {

/// Overflow-safe logistic function.
inline double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

/// log sigmoid(z) = -softplus(-z).
inline double log_sigmoid(double z) { return -softplus(-z); }

// ---------------------------------------------------------------------------
// Logistic regression: theta has one weight per feature column (datasets
// ingested from LIBSVM already carry the constant bias feature).
// ---------------------------------------------------------------------------

inline Eigen::VectorXd logistic_probabilities(const Eigen::VectorXd& theta,
                                              const Eigen::MatrixXd& x) {
  if (x.cols() != theta.size()) throw config_error("logistic: theta/feature dimension mismatch");
  Eigen::VectorXd p = x * theta;
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = sigmoid(p(i));
  return p;
}

/// Per-example gradients of log p(y_i | x_i, theta): row i is
/// (y_i - sigma(x_i^T theta)) x_i.
inline Eigen::MatrixXd logistic_per_example_grads(const Eigen::VectorXd& theta,
                                                  const Eigen::MatrixXd& x,
                                                  const Eigen::VectorXd& y) {
  Eigen::VectorXd r = y - logistic_probabilities(theta, x);
  return x.array().colwise() * r.array();
}

/// Curvature weights w_i = sigma_i (1 - sigma_i); the per-example Hessian of
/// the negative log-likelihood is w_i x_i x_i^T (kept factored, never dense).
inline Eigen::VectorXd logistic_hessian_weights(const Eigen::VectorXd& theta,
                                                const Eigen::MatrixXd& x) {
  Eigen::VectorXd p = logistic_probabilities(theta, x);
  return p.array() * (1.0 - p.array());
}

inline Eigen::VectorXd logistic_log_likelihoods(const Eigen::VectorXd& theta,
                                                const Eigen::MatrixXd& x,
                                                const Eigen::VectorXd& y) {
  if (x.cols() != theta.size()) throw config_error("logistic: theta/feature dimension mismatch");
  Eigen::VectorXd z = x * theta;
  Eigen::VectorXd out(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i)
    out(i) = y(i) == 1.0 ? log_sigmoid(z(i)) : log_sigmoid(-z(i));
  return out;
}

// ---------------------------------------------------------------------------
// Fully connected relu network with a single output unit and either a
// Bernoulli-logit or fixed-precision Gaussian likelihood on that output.
// ---------------------------------------------------------------------------

enum class Likelihood { bernoulli_logit, gaussian };

struct MlpArchitecture {
  Eigen::Index input = 1;
  std::vector<Eigen::Index> hidden;
  Likelihood likelihood = Likelihood::gaussian;
  double tau = 1.0;  // Gaussian observation precision

  void validate() const {
    if (input < 1) throw config_error("mlp: input width must be >= 1");
    for (auto h : hidden)
      if (h < 1) throw config_error("mlp: hidden widths must be >= 1");
    if (!(tau > 0.0)) throw config_error("mlp: tau must be positive");
  }

  /// Layer widths input -> hidden... -> 1.
  std::vector<Eigen::Index> widths() const {
    validate();
    std::vector<Eigen::Index> w;
    w.push_back(input);
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
  }

  /// Flat parameter count. Layer l contributes (fan_in + 1) * fan_out;
  /// packing order is W_l row-major (unit by unit) followed by b_l.
  Eigen::Index param_count() const {
    auto w = widths();
    Eigen::Index p = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) p += (w[l] + 1) * w[l + 1];
    return p;
  }
};

namespace detail {

struct MlpLayerView {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w;
  Eigen::Map<const Eigen::VectorXd> b;
  Eigen::Index offset;  // W block start within theta; bias follows the block
};

inline std::vector<MlpLayerView> mlp_layers(const MlpArchitecture& arch,
                                            const Eigen::VectorXd& theta) {
  auto widths = arch.widths();
  if (theta.size() != arch.param_count())
    throw config_error("mlp: theta has " + std::to_string(theta.size()) + " entries, expected " +
                       std::to_string(arch.param_count()));
  std::vector<MlpLayerView> layers;
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const Eigen::Index in = widths[l], out = widths[l + 1];
    layers.push_back(MlpLayerView{
        {theta.data() + off, out, in}, {theta.data() + off + in * out, out}, off});
    off += (in + 1) * out;
  }
  return layers;
}

// Forward pass for one example with caches; returns the scalar output.
inline double mlp_forward_one(const std::vector<MlpLayerView>& layers, const Eigen::VectorXd& x0,
                              std::vector<Eigen::VectorXd>* zs,
                              std::vector<Eigen::VectorXd>* as) {
  Eigen::VectorXd a = x0;
  if (as) as->push_back(a);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::VectorXd z = layers[l].w * a + layers[l].b;
    if (zs) zs->push_back(z);
    a = (l + 1 < layers.size()) ? z.cwiseMax(0.0).eval() : z;
    if (as) as->push_back(a);
  }
  return a(0);
}

}  // namespace detail

inline Eigen::VectorXd mlp_forward(const MlpArchitecture& arch, const Eigen::VectorXd& theta,
                                   const Eigen::MatrixXd& x) {
  if (x.cols() != arch.input) throw config_error("mlp: feature dimension != input width");
  auto layers = detail::mlp_layers(arch, theta);
  Eigen::VectorXd f(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    f(i) = detail::mlp_forward_one(layers, x.row(i).transpose(), nullptr, nullptr);
  return f;
}

/// Per-example gradients of log p(y_i | x_i, theta), one backward pass per
/// row over cached activations (cost O(n * params)). The relu subgradient at
/// exactly 0 is taken as 0. Row-by-row evaluation keeps a batch bitwise
/// identical to n single-example passes.
inline Eigen::MatrixXd mlp_per_example_grads(const MlpArchitecture& arch,
                                             const Eigen::VectorXd& theta,
                                             const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  if (x.cols() != arch.input) throw config_error("mlp: feature dimension != input width");
  auto layers = detail::mlp_layers(arch, theta);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), theta.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<Eigen::VectorXd> zs, as;
    const double f = detail::mlp_forward_one(layers, x.row(i).transpose(), &zs, &as);
    Eigen::VectorXd delta(1);
    delta(0) = arch.likelihood == Likelihood::bernoulli_logit ? y(i) - sigmoid(f)
                                                              : arch.tau * (y(i) - f);
    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& lay = layers[l];
      const Eigen::Index in = lay.w.cols(), width = lay.w.rows();
      for (Eigen::Index r = 0; r < width; ++r) {
        out.row(i).segment(lay.offset + r * in, in) = delta(r) * as[l].transpose();
        out(i, lay.offset + in * width + r) = delta(r);
      }
      if (l > 0)
        delta = (lay.w.transpose() * delta).cwiseProduct(
            (zs[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return out;
}

inline Eigen::VectorXd mlp_log_likelihoods(const MlpArchitecture& arch,
                                           const Eigen::VectorXd& theta, const Eigen::MatrixXd& x,
                                           const Eigen::VectorXd& y) {
  Eigen::VectorXd f = mlp_forward(arch, theta, x);
  Eigen::VectorXd out(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (arch.likelihood == Likelihood::bernoulli_logit)
      out(i) = y(i) == 1.0 ? log_sigmoid(f(i)) : log_sigmoid(-f(i));
    else
      out(i) = 0.5 * std::log(arch.tau / (2.0 * M_PI)) -
               0.5 * arch.tau * (y(i) - f(i)) * (y(i) - f(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Uniform model handle for the experiment layer.
// ---------------------------------------------------------------------------

struct Model {
  enum class Kind { logistic, mlp };
  Kind kind = Kind::logistic;
  MlpArchitecture arch;  // consulted only when kind == mlp

  Eigen::Index parameter_dim(Eigen::Index feature_dim) const {
    if (kind == Kind::logistic) return feature_dim;
    if (arch.input != feature_dim)
      throw config_error("mlp input width " + std::to_string(arch.input) +
                         " does not match the dataset feature dimension " +
                         std::to_string(feature_dim));
    return arch.param_count();
  }
};

inline Eigen::MatrixXd model_per_example_grads(const Model& m, const Eigen::VectorXd& theta,
                                               const Eigen::MatrixXd& x,
                                               const Eigen::VectorXd& y) {
  return m.kind == Model::Kind::logistic ? logistic_per_example_grads(theta, x, y)
                                         : mlp_per_example_grads(m.arch, theta, x, y);
}

inline Eigen::VectorXd model_log_likelihoods(const Model& m, const Eigen::VectorXd& theta,
                                             const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  return m.kind == Model::Kind::logistic ? logistic_log_likelihoods(theta, x, y)
                                         : mlp_log_likelihoods(m.arch, theta, x, y);
}

/// Point prediction: class-1 probability for classifiers, the network output
/// for Gaussian-likelihood regression.
inline Eigen::VectorXd model_predict(const Model& m, const Eigen::VectorXd& theta,
                                     const Eigen::MatrixXd& x) {
  if (m.kind == Model::Kind::logistic) return logistic_probabilities(theta, x);
  Eigen::VectorXd f = mlp_forward(m.arch, theta, x);
  if (m.arch.likelihood == Likelihood::bernoulli_logit)
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = sigmoid(f(i));
  return f;
}

/// Curvature weights for Hessian-based updates; defined for the logistic
/// model only.
inline Eigen::VectorXd model_hessian_weights(const Model& m, const Eigen::VectorXd& theta,
                                             const Eigen::MatrixXd& x) {
  if (m.kind != Model::Kind::logistic)
    throw config_error("Hessian-based updates are available for the logistic model only");
  return logistic_hessian_weights(theta, x);
}

}  // namespace slang
