#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "slang/dataset.hpp"
#include "slang/experiment.hpp"
#include "slang/low_rank_plus_diag.hpp"
#include "slang/models.hpp"
#include "slang/optimizers.hpp"
#include "slang/rng.hpp"
#include "slang/serialize.hpp"

namespace slang {

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

template <typename Fn>
inline SelftestResult selftest_case(const std::string& name, Fn fn) {
  SelftestResult r{name, false, ""};
  try {
    r.detail = fn();
    r.passed = true;
  } catch (const std::exception& e) {
    r.detail = e.what();
  }
  return r;
}

inline void selftest_require(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error(msg);
}

inline std::string selftest_fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace detail

/// Quick deterministic health checks exercising the main numerical paths.
/// Intended for installed binaries, not as a substitute for the test suite.
inline std::vector<SelftestResult> run_selftest() {
  using detail::selftest_case;
  using detail::selftest_require;
  std::vector<SelftestResult> results;

  results.push_back(selftest_case("factored-solve", [] {
    RngStream rng(101);
    const Eigen::Index dim = 12, rank = 3;
    Eigen::MatrixXd u(dim, rank);
    Eigen::VectorXd d(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      d(i) = 0.5 + rng.uniform();
      for (Eigen::Index j = 0; j < rank; ++j) u(i, j) = rng.normal();
    }
    LowRankDiagMatrix a(u, d);
    Eigen::VectorXd rhs(dim);
    for (Eigen::Index i = 0; i < dim; ++i) rhs(i) = rng.normal();
    const Eigen::VectorXd got = woodbury_solve(a, rhs);
    const Eigen::VectorXd want = a.dense().ldlt().solve(rhs);
    const double err = (got - want).norm() / want.norm();
    selftest_require(err < 1e-10, "solve error " + detail::selftest_fmt(err));
    return "relative error " + detail::selftest_fmt(err);
  }));

  results.push_back(selftest_case("randomized-eig", [] {
    RngStream rng(202);
    const Eigen::Index dim = 20, rank = 3;
    Eigen::MatrixXd cols(dim, rank + 2);
    cols.setZero();
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < rank; ++j) cols(i, j) = rng.normal() * (3.0 - j);
    EigPair eig = fast_eig(cols, rank, rng);
    const Eigen::MatrixXd exact = cols * cols.transpose();
    const Eigen::MatrixXd approx = eig.vectors * eig.values.asDiagonal() *
                                   eig.vectors.transpose();
    const double err = (exact - approx).norm() / exact.norm();
    selftest_require(err < 1e-8, "reconstruction error " + detail::selftest_fmt(err));
    return "reconstruction error " + detail::selftest_fmt(err);
  }));

  results.push_back(selftest_case("logistic-gradient", [] {
    RngStream rng(303);
    const Eigen::Index n = 6, dim = 4;
    Eigen::MatrixXd x(n, dim);
    Eigen::VectorXd y(n), theta(dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      y(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
      for (Eigen::Index j = 0; j < dim; ++j) x(i, j) = rng.normal();
    }
    for (Eigen::Index j = 0; j < dim; ++j) theta(j) = 0.3 * rng.normal();
    const Eigen::VectorXd grad = logistic_per_example_grads(theta, x, y).colwise().sum();
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index j = 0; j < dim; ++j) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(j) += h;
      tm(j) -= h;
      const double fd = (logistic_log_likelihoods(tp, x, y).sum() -
                         logistic_log_likelihoods(tm, x, y).sum()) /
                        (2.0 * h);
      worst = std::max(worst, std::abs(fd - grad(j)));
    }
    selftest_require(worst < 1e-5, "gradient error " + detail::selftest_fmt(worst));
    return "max finite-difference error " + detail::selftest_fmt(worst);
  }));

  results.push_back(selftest_case("full-rank-coincidence", [] {
    RngStream data_rng(404);
    const Eigen::Index n = 24, dim = 4;
    Dataset ds;
    ds.features.resize(n, dim);
    ds.targets.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) ds.features(i, j) = data_rng.normal();
      ds.targets(i) = data_rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    OptimizerConfig cfg;
    cfg.prior_precision = 0.5;
    cfg.rank = dim;
    cfg.n_total = n;
    cfg.mc_samples = 2;
    GaussianState lr = init_state(cfg, dim);
    DenseGaussianState dn = init_dense_state(cfg, dim);
    Model model;
    RngStream sample_rng(7), eig_rng(8);
    for (int t = 0; t < 10; ++t) {
      // identical gradient batches isolate the update rules themselves
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, dim);
      for (int k = 0; k < cfg.mc_samples; ++k)
        g += model_per_example_grads(model, sample_gaussian(lr.mean, lr.precision, sample_rng),
                                     ds.features, ds.targets);
      g /= cfg.mc_samples;
      slang_step(lr, cfg, g, eig_rng);
      vogn_full_step(dn, cfg, g);
    }
    const double mean_err = (lr.mean - dn.mean).norm();
    const Eigen::MatrixXd prec = lr.precision.dense();
    const double prec_err = (prec - dn.precision).norm() / dn.precision.norm();
    selftest_require(mean_err < 1e-8 && prec_err < 1e-8,
                     "mean error " + detail::selftest_fmt(mean_err) + ", precision error " +
                         detail::selftest_fmt(prec_err));
    return "mean error " + detail::selftest_fmt(mean_err);
  }));

  results.push_back(selftest_case("state-roundtrip", [] {
    OptimizerConfig cfg;
    cfg.rank = 2;
    GaussianState s = init_state(cfg, 5);
    RngStream rng(505);
    for (Eigen::Index i = 0; i < 5; ++i) s.mean(i) = rng.normal();
    s.step = 17;
    GaussianState back = state_from_json(state_to_json(s));
    selftest_require(back.mean == s.mean && back.step == s.step &&
                         back.precision.u() == s.precision.u() &&
                         back.precision.diag() == s.precision.diag(),
                     "round trip is not exact");
    return "exact round trip";
  }));

  results.push_back(selftest_case("deterministic-train", [] {
    Dataset ds = make_cubic_toy(40, 606);
    Model model;
    model.kind = Model::Kind::mlp;
    model.arch.input = 1;
    model.arch.hidden = {6};
    model.arch.likelihood = Likelihood::gaussian;
    model.arch.tau = 0.25;
    TrainOptions o;
    o.opt.prior_precision = 0.5;
    o.opt.rank = 2;
    o.opt.mc_samples = 2;
    o.minibatch = 10;
    o.epochs = 3;
    o.seed = 909;
    TrainResult a = train(model, ds, o);
    TrainResult b = train(model, ds, o);
    selftest_require(!a.diverged && a.state.mean == b.state.mean &&
                         a.state.precision.diag() == b.state.precision.diag(),
                     "repeated runs differ");
    return "repeated runs agree bitwise";
  }));

  return results;
}

}  // namespace slang
