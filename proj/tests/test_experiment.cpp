#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "slang/dataset.hpp"
#include "slang/errors.hpp"
#include "slang/experiment.hpp"
#include "slang/metrics.hpp"
#include "slang/rng.hpp"
#include "slang/serialize.hpp"

using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Linearly separable-ish binary problem with a known coefficient vector.
slang::Dataset toy_logistic(Eigen::Index n, std::uint64_t seed) {
  slang::RngStream rng(seed);
  const Eigen::Index dim = 5;
  VectorXd truth(dim);
  truth << 2.0, -1.0, 1.5, 0.0, 0.5;
  slang::Dataset ds;
  ds.features = MatrixXd(n, dim);
  ds.targets = VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) ds.features(i, j) = rng.normal();
    const double p = slang::sigmoid(ds.features.row(i).dot(truth));
    ds.targets(i) = rng.uniform() < p ? 1.0 : 0.0;
  }
  return ds;
}

slang::TrainOptions base_options(std::uint64_t seed) {
  slang::TrainOptions o;
  o.method = slang::Method::slang;
  o.opt.prior_precision = 0.1;
  o.opt.rank = 2;
  o.opt.alpha0 = 0.05;
  o.opt.beta0 = 0.05;
  o.opt.decay = true;
  o.opt.mc_samples = 4;
  o.minibatch = 16;
  o.epochs = 10;
  o.seed = seed;
  o.trace_samples = 8;
  return o;
}

}  // namespace

TEST_CASE("zero epochs leaves the prior untouched", "[experiment]") {
  slang::Dataset ds = toy_logistic(40, 1);
  slang::Model model;
  slang::TrainOptions o = base_options(7);
  o.epochs = 0;

  slang::TrainResult r = slang::train(model, ds, o);
  REQUIRE_FALSE(r.diverged);
  REQUIRE(r.steps == 0);
  REQUIRE(r.trace.empty());
  REQUIRE(r.state.mean.isZero(0.0));
  REQUIRE((r.state.precision.diag().array() == o.opt.prior_precision).all());
  REQUIRE(r.state.precision.rank() == 2);
}

TEST_CASE("step counting and trace cadence", "[experiment]") {
  slang::Dataset ds = toy_logistic(10, 2);
  slang::Model model;
  slang::TrainOptions o = base_options(3);
  o.minibatch = 4;  // chunks of 4, 4, 2 per epoch
  o.epochs = 5;

  slang::TrainResult per_epoch = slang::train(model, ds, o);
  REQUIRE(per_epoch.steps == 15);
  REQUIRE(per_epoch.trace.size() == 5);
  for (std::size_t e = 0; e < per_epoch.trace.size(); ++e) {
    REQUIRE(per_epoch.trace[e].epoch == static_cast<long>(e + 1));
    REQUIRE(per_epoch.trace[e].step == static_cast<long>(3 * (e + 1)));
    REQUIRE(std::isfinite(per_epoch.trace[e].neg_elbo));
    REQUIRE(std::isnan(per_epoch.trace[e].test_nll));
  }

  o.trace_stride = 2;
  slang::TrainResult strided = slang::train(model, ds, o);
  REQUIRE(strided.trace.size() == 7);
  for (std::size_t k = 0; k < strided.trace.size(); ++k)
    REQUIRE(strided.trace[k].step == static_cast<long>(2 * (k + 1)));
}

TEST_CASE("training is deterministic in the seed", "[experiment]") {
  slang::Dataset ds = toy_logistic(30, 3);
  slang::Model model;
  slang::TrainOptions o = base_options(11);
  o.epochs = 4;

  slang::TrainResult a = slang::train(model, ds, o);
  slang::TrainResult b = slang::train(model, ds, o);
  REQUIRE(a.state.mean == b.state.mean);
  REQUIRE(a.state.precision.u() == b.state.precision.u());
  REQUIRE(a.state.precision.diag() == b.state.precision.diag());
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k)
    REQUIRE(a.trace[k].neg_elbo == b.trace[k].neg_elbo);

  o.seed = 12;
  slang::TrainResult c = slang::train(model, ds, o);
  REQUIRE(a.state.mean != c.state.mean);
}

TEST_CASE("tail averaging replaces the mean with the window average", "[experiment]") {
  slang::Dataset ds = toy_logistic(30, 6);
  slang::Model model;
  slang::TrainOptions o = base_options(17);
  o.epochs = 6;

  slang::TrainResult last = slang::train(model, ds, o);

  // A window of one epoch averages only the final iterate.
  o.average_tail_epochs = 1;
  slang::TrainResult w1 = slang::train(model, ds, o);
  REQUIRE(w1.state.mean == last.state.mean);

  // A wider window changes the mean but never the precision.
  o.average_tail_epochs = 6;
  slang::TrainResult w6 = slang::train(model, ds, o);
  REQUIRE(w6.state.mean != last.state.mean);
  REQUIRE(w6.state.mean.allFinite());
  REQUIRE(w6.state.precision.u() == last.state.precision.u());
  REQUIRE(w6.state.precision.diag() == last.state.precision.diag());

  // The trace cadence never changes the averaged result.
  o.trace_stride = 5;
  slang::TrainResult strided = slang::train(model, ds, o);
  REQUIRE(strided.state.mean == w6.state.mean);

  o.average_tail_epochs = 7;
  REQUIRE_THROWS_AS(o.validate(), slang::config_error);
  o.average_tail_epochs = -1;
  REQUIRE_THROWS_AS(o.validate(), slang::config_error);

  // Dense training honours the same option.
  o.average_tail_epochs = 0;
  o.trace_stride = 0;
  o.method = slang::Method::vogn_full;
  slang::DenseTrainResult dense_last = slang::train_dense(model, ds, o);
  o.average_tail_epochs = 1;
  slang::DenseTrainResult dense_w1 = slang::train_dense(model, ds, o);
  REQUIRE(dense_w1.state.mean == dense_last.state.mean);
  o.average_tail_epochs = 6;
  slang::DenseTrainResult dense_w6 = slang::train_dense(model, ds, o);
  REQUIRE(dense_w6.state.mean != dense_last.state.mean);
  REQUIRE(dense_w6.state.precision == dense_last.state.precision);
}

TEST_CASE("diagonal methods train with rank zero", "[experiment]") {
  slang::Dataset ds = toy_logistic(30, 4);
  slang::Model model;
  slang::TrainOptions o = base_options(5);
  o.epochs = 2;
  o.opt.rank = 5;  // ignored by the diagonal methods

  for (slang::Method m :
       {slang::Method::mean_field_ef, slang::Method::mean_field_hessian}) {
    o.method = m;
    slang::TrainResult r = slang::train(model, ds, o);
    REQUIRE(r.state.precision.rank() == 0);
    REQUIRE_FALSE(r.diverged);
  }
}

TEST_CASE("the objective decreases on a learnable problem", "[experiment]") {
  slang::Dataset train_ds = toy_logistic(160, 6);
  slang::Dataset test_ds = toy_logistic(80, 60);
  slang::Model model;
  slang::TrainOptions o = base_options(21);
  o.epochs = 30;
  o.test = &test_ds;
  o.trace_test_samples = 50;

  slang::TrainResult r = slang::train(model, train_ds, o);
  REQUIRE_FALSE(r.diverged);
  REQUIRE(r.trace.front().neg_elbo > r.trace.back().neg_elbo + 0.05);
  // better than random guessing on held-out data
  REQUIRE(r.trace.back().test_nll < 0.65);

  slang::RngStream eval(123);
  const double final_nll = slang::predictive_nll(model, test_ds, r.state, 200, eval);
  REQUIRE(final_nll < 0.65);
}

TEST_CASE("dense reference training mirrors the factored interface", "[experiment]") {
  slang::Dataset ds = toy_logistic(30, 8);
  slang::Model model;
  slang::TrainOptions o = base_options(13);
  o.epochs = 3;
  o.method = slang::Method::vogn_full;

  slang::DenseTrainResult r = slang::train_dense(model, ds, o);
  REQUIRE_FALSE(r.diverged);
  REQUIRE(r.steps == 3 * 2);  // 30 examples in chunks of 16
  REQUIRE(r.trace.size() == 3);
  REQUIRE(r.state.precision.rows() == 5);

  slang::DenseTrainResult r2 = slang::train_dense(model, ds, o);
  REQUIRE(r.state.mean == r2.state.mean);
  REQUIRE(r.state.precision == r2.state.precision);

  o.method = slang::Method::von_full;
  REQUIRE_NOTHROW(slang::train_dense(model, ds, o));

  o.method = slang::Method::slang;
  REQUIRE_THROWS_AS(slang::train_dense(model, ds, o), slang::config_error);
  o.method = slang::Method::vogn_full;
  REQUIRE_THROWS_AS(slang::train(model, ds, o), slang::config_error);
}

TEST_CASE("method names round trip", "[experiment]") {
  for (slang::Method m : {slang::Method::slang, slang::Method::mean_field_ef,
                          slang::Method::mean_field_hessian, slang::Method::vogn_full,
                          slang::Method::von_full, slang::Method::online_eig})
    REQUIRE(slang::parse_method(slang::method_name(m)) == m);
  REQUIRE_THROWS_AS(slang::parse_method("bogus"), slang::config_error);
}

TEST_CASE("experiment config json parsing", "[experiment]") {
  nlohmann::json j = {
      {"name", "toy"},
      {"method", "slang"},
      {"dataset",
       {{"kind", "libsvm"}, {"train", "somefile"}, {"train_fraction", 0.6},
        {"standardize", true}}},
      {"model", {{"kind", "logistic"}}},
      {"optimizer",
       {{"prior_precision", 0.01}, {"rank", 4}, {"alpha0", 0.1}, {"beta0", 0.1},
        {"decay", false}, {"minibatch", 8}}},
      {"run", {{"epochs", 17}, {"splits", 3}, {"restarts", 2}, {"eval_samples", 64}}}};

  slang::ExperimentConfig cfg = slang::ExperimentConfig::from_json(j);
  REQUIRE(cfg.name == "toy");
  REQUIRE(cfg.method == slang::Method::slang);
  REQUIRE(cfg.dataset.kind == "libsvm");
  REQUIRE(cfg.dataset.train == "somefile");
  REQUIRE(cfg.dataset.train_fraction == 0.6);
  REQUIRE(cfg.dataset.standardize);
  REQUIRE(cfg.optimizer.prior_precision == 0.01);
  REQUIRE(cfg.optimizer.rank == 4);
  REQUIRE_FALSE(cfg.optimizer.decay);
  REQUIRE(cfg.minibatch == 8);
  REQUIRE(cfg.run.epochs == 17);
  REQUIRE(cfg.run.splits == 3);
  REQUIRE(cfg.run.restarts == 2);
  REQUIRE(cfg.run.eval_samples == 64);
  // defaults fill anything omitted
  REQUIRE(cfg.optimizer.momentum == 0.9);
  REQUIRE(cfg.run.trace_stride == 0);

  // unknown keys are typos, not extensions
  nlohmann::json bad = j;
  bad["rank"] = 3;  // belongs inside "optimizer"
  REQUIRE_THROWS_AS(slang::ExperimentConfig::from_json(bad), slang::config_error);
  bad = j;
  bad["method"] = "sgd";
  REQUIRE_THROWS_AS(slang::ExperimentConfig::from_json(bad), slang::config_error);
  bad = j;
  bad["dataset"].erase("train");
  REQUIRE_THROWS_AS(slang::ExperimentConfig::from_json(bad), slang::config_error);

  // the canonical echo reparses to the same configuration
  slang::ExperimentConfig echo = slang::ExperimentConfig::from_json(cfg.to_json());
  REQUIRE(echo.to_json() == cfg.to_json());
}

TEST_CASE("experiments over file-backed data aggregate runs", "[experiment]") {
  namespace fs = std::filesystem;
  const fs::path file = fs::temp_directory_path() / "slang_exp_toy.libsvm";
  {
    slang::Dataset ds = toy_logistic(60, 9);
    std::ofstream out(file);
    slang::serialize_libsvm(ds, out);
  }

  slang::ExperimentConfig cfg;
  cfg.name = "filetoy";
  cfg.method = slang::Method::slang;
  cfg.dataset.kind = "libsvm";
  cfg.dataset.train = file.string();
  cfg.dataset.train_fraction = 0.5;
  cfg.model.kind = "logistic";
  cfg.optimizer.prior_precision = 0.1;
  cfg.optimizer.rank = 1;
  cfg.optimizer.mc_samples = 3;
  cfg.minibatch = 16;
  cfg.run.epochs = 2;
  cfg.run.splits = 2;
  cfg.run.restarts = 2;
  cfg.run.eval_samples = 32;
  cfg.run.save_states = true;

  slang::ExperimentOutcome out = slang::run_experiment(cfg, 42);
  REQUIRE(out.report.at("runs").size() == 4);
  REQUIRE(out.report.at("aggregate").at("neg_elbo").at("count") == 4);
  REQUIRE(out.report.at("aggregate").at("test_nll").at("count") == 4);
  const double se = out.report.at("aggregate").at("neg_elbo").at("se");
  REQUIRE(std::isfinite(se));
  for (const auto& run : out.report.at("runs")) {
    REQUIRE(run.at("diverged") == false);
    REQUIRE(std::isfinite(run.at("neg_elbo").get<double>()));
    REQUIRE(std::isfinite(run.at("test_nll").get<double>()));
  }

  // four traces and four saved states
  int traces = 0, states = 0;
  for (const auto& [name, content] : out.files) {
    if (name.rfind("trace_", 0) == 0) {
      ++traces;
      REQUIRE(content.rfind("epoch,step,neg_elbo,test_nll\n", 0) == 0);
    }
    if (name.rfind("state_", 0) == 0) {
      ++states;
      slang::GaussianState s = slang::state_from_json(nlohmann::json::parse(content));
      REQUIRE(s.mean.size() == 6);  // five features plus the bias column
    }
  }
  REQUIRE(traces == 4);
  REQUIRE(states == 4);

  // byte-identical rerun
  slang::ExperimentOutcome again = slang::run_experiment(cfg, 42);
  REQUIRE(again.report.dump() == out.report.dump());
  REQUIRE(again.files == out.files);

  slang::ExperimentOutcome other = slang::run_experiment(cfg, 43);
  REQUIRE(other.report.dump() != out.report.dump());

  fs::remove(file);
}

TEST_CASE("generated regression data trains end to end", "[experiment]") {
  slang::ExperimentConfig cfg;
  cfg.name = "cubic";
  cfg.method = slang::Method::slang;
  cfg.dataset.kind = "cubic_toy";
  cfg.dataset.toy_n = 60;
  cfg.model.kind = "mlp";
  cfg.model.hidden = {8};
  cfg.model.likelihood = "gaussian";
  cfg.model.tau = 0.25;
  cfg.optimizer.prior_precision = 0.5;
  cfg.optimizer.rank = 3;
  cfg.optimizer.mc_samples = 2;
  cfg.minibatch = 10;
  cfg.run.epochs = 3;
  cfg.run.eval_samples = 16;

  slang::ExperimentOutcome out = slang::run_experiment(cfg, 5);
  REQUIRE(out.report.at("runs").size() == 1);
  REQUIRE(std::isfinite(out.report.at("aggregate").at("rmse").at("mean").get<double>()));
  slang::ExperimentOutcome again = slang::run_experiment(cfg, 5);
  REQUIRE(again.report.dump() == out.report.dump());
}
