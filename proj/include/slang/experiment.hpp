#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "slang/dataset.hpp"
#include "slang/errors.hpp"
#include "slang/metrics.hpp"
#include "slang/models.hpp"
#include "slang/optimizers.hpp"
#include "slang/rng.hpp"
#include "slang/serialize.hpp"

namespace slang {

enum class Method { slang, mean_field_ef, mean_field_hessian, vogn_full, von_full, online_eig };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::slang: return "slang";
    case Method::mean_field_ef: return "mean-field-ef";
    case Method::mean_field_hessian: return "mean-field-hessian";
    case Method::vogn_full: return "vogn-full";
    case Method::von_full: return "von-full";
    case Method::online_eig: return "online-eig";
  }
  throw config_error("unknown method");
}

inline Method parse_method(const std::string& name) {
  for (Method m : {Method::slang, Method::mean_field_ef, Method::mean_field_hessian,
                   Method::vogn_full, Method::von_full, Method::online_eig})
    if (name == method_name(m)) return m;
  throw config_error("unknown method '" + name + "'");
}

inline bool is_dense_method(Method m) {
  return m == Method::vogn_full || m == Method::von_full;
}

struct TrainOptions {
  Method method = Method::slang;
  OptimizerConfig opt;
  Eigen::Index minibatch = 32;
  long epochs = 100;
  std::uint64_t seed = 0;
  int trace_samples = 20;   // draws per objective trace record
  long trace_stride = 0;    // record every k steps; 0 records at epoch ends
  const Dataset* test = nullptr;  // when set, trace records include test NLL
  int trace_test_samples = 100;
  // Replace the returned mean with its average over the epoch-end iterates of
  // the last k epochs. The covariance settles long before the mean stops
  // jittering under minibatch noise, so averaging the tail gives a far better
  // estimate of the fixed point. 0 keeps the last iterate.
  long average_tail_epochs = 0;

  void validate() const {
    opt.validate();
    if (minibatch < 1) throw config_error("minibatch size must be positive");
    if (epochs < 0) throw config_error("epoch count must be non-negative");
    if (trace_samples < 1) throw config_error("trace sample count must be positive");
    if (trace_stride < 0) throw config_error("trace stride must be non-negative");
    if (test != nullptr && trace_test_samples < 1)
      throw config_error("test trace sample count must be positive");
    if (average_tail_epochs < 0 || average_tail_epochs > epochs)
      throw config_error("mean averaging window must lie within the epoch count");
  }
};

struct TraceRow {
  long epoch = 0;
  long step = 0;
  double neg_elbo = std::numeric_limits<double>::quiet_NaN();
  double test_nll = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  GaussianState state;
  std::vector<TraceRow> trace;
  bool diverged = false;
  long steps = 0;
};

struct DenseTrainResult {
  DenseGaussianState state;
  std::vector<TraceRow> trace;
  bool diverged = false;
  long steps = 0;
};

namespace detail {

inline void shuffle_indices(std::vector<Eigen::Index>& idx, RngStream& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(static_cast<std::uint64_t>(i))]);
}

struct Minibatch {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

inline Minibatch gather(const Dataset& data, const std::vector<Eigen::Index>& order,
                        std::size_t begin, std::size_t end) {
  Minibatch b;
  b.x.resize(static_cast<Eigen::Index>(end - begin), data.d());
  b.y.resize(static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) {
    b.x.row(static_cast<Eigen::Index>(k - begin)) = data.features.row(order[k]);
    b.y(static_cast<Eigen::Index>(k - begin)) = data.targets(order[k]);
  }
  return b;
}

/// Shared driver: walks seeded epoch shuffles and minibatch chunks, calling
/// `do_step(batch)` once per chunk, `epoch_end(epoch)` after every epoch, and
/// `record(epoch)` on the configured cadence. Numerical breakdown marks the
/// run diverged.
template <typename StepFn, typename EpochFn, typename RecordFn>
inline bool run_epochs(const Dataset& data, const TrainOptions& o, long& steps, StepFn do_step,
                       EpochFn epoch_end, RecordFn record) {
  RngStream shuffle_rng(derive_seed(o.seed, 11));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.n()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);

  try {
    for (long epoch = 1; epoch <= o.epochs; ++epoch) {
      shuffle_indices(order, shuffle_rng);
      for (std::size_t begin = 0; begin < order.size();
           begin += static_cast<std::size_t>(o.minibatch)) {
        const std::size_t end =
            std::min(order.size(), begin + static_cast<std::size_t>(o.minibatch));
        do_step(gather(data, order, begin, end));
        ++steps;
        if (o.trace_stride > 0 && steps % o.trace_stride == 0)
          if (!record(epoch)) return true;
      }
      epoch_end(epoch);
      if (o.trace_stride == 0)
        if (!record(epoch)) return true;
    }
  } catch (const numeric_error&) {
    return true;
  }
  return false;
}

/// Accumulates epoch-end means over the trailing averaging window and, for
/// completed runs, writes the average back as the final mean.
struct TailMean {
  long window = 0;
  long total_epochs = 0;
  Eigen::VectorXd sum;
  long count = 0;

  TailMean(const TrainOptions& o, Eigen::Index dim)
      : window(o.average_tail_epochs), total_epochs(o.epochs), sum(Eigen::VectorXd::Zero(dim)) {}

  void observe(long epoch, const Eigen::VectorXd& mean) {
    if (window == 0 || epoch <= total_epochs - window) return;
    sum += mean;
    ++count;
  }

  void finish(bool diverged, Eigen::VectorXd& mean) const {
    if (!diverged && count > 0) mean = sum / static_cast<double>(count);
  }
};

}  // namespace detail

/// Minibatch training of the factored-precision methods. Parameter draws for
/// the gradient estimator, the sketched eigendecomposition, epoch shuffles,
/// and trace evaluation all consume separate derived random streams, so the
/// trace cadence never changes the optimization path.
inline TrainResult train(const Model& model, const Dataset& data, const TrainOptions& o) {
  o.validate();
  if (is_dense_method(o.method))
    throw config_error("dense reference methods train through train_dense");
  validate_dataset(data);

  OptimizerConfig cfg = o.opt;
  cfg.n_total = data.n();
  if (o.method != Method::slang && o.method != Method::online_eig) cfg.rank = 0;
  const Eigen::Index dim = model.parameter_dim(data.d());

  TrainResult res{init_state(cfg, dim), {}, false, 0};
  RngStream sample_rng(derive_seed(o.seed, 12));
  RngStream eig_rng(derive_seed(o.seed, 13));
  RngStream eval_rng(derive_seed(o.seed, 14));

  auto do_step = [&](const detail::Minibatch& b) {
    Eigen::MatrixXd grads = Eigen::MatrixXd::Zero(b.x.rows(), dim);
    Eigen::VectorXd weights;
    if (o.method == Method::mean_field_hessian) weights = Eigen::VectorXd::Zero(b.x.rows());
    for (int k = 0; k < cfg.mc_samples; ++k) {
      Eigen::VectorXd theta = sample_gaussian(res.state.mean, res.state.precision, sample_rng);
      grads += model_per_example_grads(model, theta, b.x, b.y);
      if (o.method == Method::mean_field_hessian)
        weights += model_hessian_weights(model, theta, b.x);
    }
    grads /= static_cast<double>(cfg.mc_samples);
    switch (o.method) {
      case Method::slang:
        slang_step(res.state, cfg, grads, eig_rng);
        break;
      case Method::mean_field_ef:
        mean_field_step(res.state, cfg, grads);
        break;
      case Method::mean_field_hessian: {
        weights /= static_cast<double>(cfg.mc_samples);
        Eigen::VectorXd curv = (b.x.array().square().colwise() * weights.array())
                                   .colwise()
                                   .sum()
                                   .matrix()
                                   .transpose();
        mean_field_step(res.state, cfg, grads, curv);
        break;
      }
      case Method::online_eig:
        online_eig_step(res.state, cfg, grads, eig_rng);
        break;
      default:
        throw config_error("unreachable method");
    }
  };

  auto record = [&](long epoch) {
    TraceRow row;
    row.epoch = epoch;
    row.step = res.steps;
    row.neg_elbo =
        negative_elbo(model, data, res.state, cfg.prior_precision, o.trace_samples, eval_rng);
    if (o.test)
      row.test_nll = predictive_nll(model, *o.test, res.state, o.trace_test_samples, eval_rng);
    res.trace.push_back(row);
    return std::isfinite(row.neg_elbo);
  };

  detail::TailMean tail(o, dim);
  auto epoch_end = [&](long epoch) { tail.observe(epoch, res.state.mean); };
  res.diverged = detail::run_epochs(data, o, res.steps, do_step, epoch_end, record);
  tail.finish(res.diverged, res.state.mean);
  return res;
}

/// Dense-precision counterpart of train for the reference methods.
inline DenseTrainResult train_dense(const Model& model, const Dataset& data,
                                    const TrainOptions& o) {
  o.validate();
  if (!is_dense_method(o.method))
    throw config_error("train_dense handles the dense reference methods only");
  validate_dataset(data);

  OptimizerConfig cfg = o.opt;
  cfg.n_total = data.n();
  const Eigen::Index dim = model.parameter_dim(data.d());

  DenseTrainResult res{init_dense_state(cfg, dim), {}, false, 0};
  RngStream sample_rng(derive_seed(o.seed, 12));
  RngStream eval_rng(derive_seed(o.seed, 14));

  auto do_step = [&](const detail::Minibatch& b) {
    Eigen::LLT<Eigen::MatrixXd> llt(res.state.precision);
    if (llt.info() != Eigen::Success)
      throw divergence_error("dense precision is not positive definite");
    Eigen::MatrixXd grads = Eigen::MatrixXd::Zero(b.x.rows(), dim);
    Eigen::VectorXd weights = Eigen::VectorXd::Zero(b.x.rows());
    for (int k = 0; k < cfg.mc_samples; ++k) {
      Eigen::VectorXd theta = detail::sample_from_precision_chol(res.state.mean, llt, sample_rng);
      grads += model_per_example_grads(model, theta, b.x, b.y);
      if (o.method == Method::von_full) weights += model_hessian_weights(model, theta, b.x);
    }
    grads /= static_cast<double>(cfg.mc_samples);
    if (o.method == Method::von_full) {
      weights /= static_cast<double>(cfg.mc_samples);
      Eigen::MatrixXd hess = b.x.transpose() * weights.asDiagonal() * b.x;
      von_full_step(res.state, cfg, grads, hess);
    } else {
      vogn_full_step(res.state, cfg, grads);
    }
  };

  auto record = [&](long epoch) {
    TraceRow row;
    row.epoch = epoch;
    row.step = res.steps;
    row.neg_elbo =
        negative_elbo(model, data, res.state, cfg.prior_precision, o.trace_samples, eval_rng);
    if (o.test)
      row.test_nll = predictive_nll(model, *o.test, res.state, o.trace_test_samples, eval_rng);
    res.trace.push_back(row);
    return std::isfinite(row.neg_elbo);
  };

  detail::TailMean tail(o, dim);
  auto epoch_end = [&](long epoch) { tail.observe(epoch, res.state.mean); };
  res.diverged = detail::run_epochs(data, o, res.steps, do_step, epoch_end, record);
  tail.finish(res.diverged, res.state.mean);
  return res;
}

// ---------------------------------------------------------------------------
// Declarative experiment descriptions, loadable from json.
// ---------------------------------------------------------------------------

struct DatasetSpec {
  std::string kind = "libsvm";  // libsvm | csv | cubic_toy
  std::string train;            // file path for the file-backed kinds
  std::string test;             // optional fixed test file; empty = random splits
  double train_fraction = 0.5;
  bool standardize = false;
  long toy_n = 100;
};

struct ModelSpec {
  std::string kind = "logistic";  // logistic | mlp
  std::vector<Eigen::Index> hidden;
  std::string likelihood = "bernoulli";  // bernoulli | gaussian
  double tau = 1.0;
};

struct RunSpec {
  long epochs = 100;
  int splits = 1;
  int restarts = 1;
  int eval_samples = 1000;  // draws for the final reported metrics
  int trace_samples = 20;
  long trace_stride = 0;
  bool trace_test_nll = false;
  int trace_test_samples = 100;
  bool save_states = false;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const char* where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw config_error(std::string("'") + where + "' must be a json object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok)
      throw config_error(std::string("unknown key '") + it.key() + "' in '" + where + "'");
  }
}

template <typename T>
inline void maybe(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it != j.end()) out = it->get<T>();
}

}  // namespace detail

struct ExperimentConfig {
  std::string name = "experiment";
  Method method = Method::slang;
  DatasetSpec dataset;
  ModelSpec model;
  OptimizerConfig optimizer;
  Eigen::Index minibatch = 32;
  RunSpec run;

  static ExperimentConfig from_json(const nlohmann::json& j) {
    detail::check_keys(j, "config", {"name", "method", "dataset", "model", "optimizer", "run"});
    ExperimentConfig c;
    detail::maybe(j, "name", c.name);
    if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());

    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      detail::check_keys(d, "dataset",
                         {"kind", "train", "test", "train_fraction", "standardize", "toy_n"});
      detail::maybe(d, "kind", c.dataset.kind);
      detail::maybe(d, "train", c.dataset.train);
      detail::maybe(d, "test", c.dataset.test);
      detail::maybe(d, "train_fraction", c.dataset.train_fraction);
      detail::maybe(d, "standardize", c.dataset.standardize);
      detail::maybe(d, "toy_n", c.dataset.toy_n);
    }
    if (c.dataset.kind != "libsvm" && c.dataset.kind != "csv" && c.dataset.kind != "cubic_toy")
      throw config_error("dataset kind must be libsvm, csv or cubic_toy");
    if (c.dataset.kind != "cubic_toy" && c.dataset.train.empty())
      throw config_error("dataset.train path is required");
    if (!(c.dataset.train_fraction > 0.0 && c.dataset.train_fraction < 1.0))
      throw config_error("train fraction must lie in (0, 1)");
    if (c.dataset.toy_n < 4) throw config_error("toy_n is too small");

    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::check_keys(m, "model", {"kind", "hidden", "likelihood", "tau"});
      detail::maybe(m, "kind", c.model.kind);
      if (m.contains("hidden")) {
        c.model.hidden.clear();
        for (const auto& h : m.at("hidden")) c.model.hidden.push_back(h.get<Eigen::Index>());
      }
      detail::maybe(m, "likelihood", c.model.likelihood);
      detail::maybe(m, "tau", c.model.tau);
    }
    if (c.model.kind != "logistic" && c.model.kind != "mlp")
      throw config_error("model kind must be logistic or mlp");
    if (c.model.likelihood != "bernoulli" && c.model.likelihood != "gaussian")
      throw config_error("likelihood must be bernoulli or gaussian");

    if (j.contains("optimizer")) {
      const auto& op = j.at("optimizer");
      detail::check_keys(op, "optimizer",
                         {"prior_precision", "rank", "alpha0", "beta0", "decay", "decay_exponent",
                          "momentum", "mc_samples", "minibatch", "eig_oversample",
                          "eig_power_iters"});
      detail::maybe(op, "prior_precision", c.optimizer.prior_precision);
      detail::maybe(op, "rank", c.optimizer.rank);
      detail::maybe(op, "alpha0", c.optimizer.alpha0);
      detail::maybe(op, "beta0", c.optimizer.beta0);
      detail::maybe(op, "decay", c.optimizer.decay);
      detail::maybe(op, "decay_exponent", c.optimizer.decay_exponent);
      detail::maybe(op, "momentum", c.optimizer.momentum);
      detail::maybe(op, "mc_samples", c.optimizer.mc_samples);
      detail::maybe(op, "minibatch", c.minibatch);
      detail::maybe(op, "eig_oversample", c.optimizer.eig_oversample);
      detail::maybe(op, "eig_power_iters", c.optimizer.eig_power_iters);
    }
    c.optimizer.n_total = 1;  // replaced by the training-set size per run
    c.optimizer.validate();
    if (c.minibatch < 1) throw config_error("minibatch size must be positive");

    if (j.contains("run")) {
      const auto& r = j.at("run");
      detail::check_keys(r, "run",
                         {"epochs", "splits", "restarts", "eval_samples", "trace_samples",
                          "trace_stride", "trace_test_nll", "trace_test_samples", "save_states"});
      detail::maybe(r, "epochs", c.run.epochs);
      detail::maybe(r, "splits", c.run.splits);
      detail::maybe(r, "restarts", c.run.restarts);
      detail::maybe(r, "eval_samples", c.run.eval_samples);
      detail::maybe(r, "trace_samples", c.run.trace_samples);
      detail::maybe(r, "trace_stride", c.run.trace_stride);
      detail::maybe(r, "trace_test_nll", c.run.trace_test_nll);
      detail::maybe(r, "trace_test_samples", c.run.trace_test_samples);
      detail::maybe(r, "save_states", c.run.save_states);
    }
    if (c.run.epochs < 0) throw config_error("epochs must be non-negative");
    if (c.run.splits < 1 || c.run.restarts < 1)
      throw config_error("splits and restarts must be positive");
    if (c.run.eval_samples < 1) throw config_error("eval_samples must be positive");
    return c;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"name", name},
        {"method", method_name(method)},
        {"dataset",
         {{"kind", dataset.kind},
          {"train", dataset.train},
          {"test", dataset.test},
          {"train_fraction", dataset.train_fraction},
          {"standardize", dataset.standardize},
          {"toy_n", dataset.toy_n}}},
        {"model",
         {{"kind", model.kind},
          {"hidden", model.hidden},
          {"likelihood", model.likelihood},
          {"tau", model.tau}}},
        {"optimizer",
         {{"prior_precision", optimizer.prior_precision},
          {"rank", optimizer.rank},
          {"alpha0", optimizer.alpha0},
          {"beta0", optimizer.beta0},
          {"decay", optimizer.decay},
          {"decay_exponent", optimizer.decay_exponent},
          {"momentum", optimizer.momentum},
          {"mc_samples", optimizer.mc_samples},
          {"minibatch", minibatch},
          {"eig_oversample", optimizer.eig_oversample},
          {"eig_power_iters", optimizer.eig_power_iters}}},
        {"run",
         {{"epochs", run.epochs},
          {"splits", run.splits},
          {"restarts", run.restarts},
          {"eval_samples", run.eval_samples},
          {"trace_samples", run.trace_samples},
          {"trace_stride", run.trace_stride},
          {"trace_test_nll", run.trace_test_nll},
          {"trace_test_samples", run.trace_test_samples},
          {"save_states", run.save_states}}}};
  }

  Model build_model(Eigen::Index feature_dim) const {
    Model m;
    if (model.kind == "logistic") {
      m.kind = Model::Kind::logistic;
      return m;
    }
    m.kind = Model::Kind::mlp;
    m.arch.input = feature_dim;
    m.arch.hidden = model.hidden;
    m.arch.likelihood =
        model.likelihood == "gaussian" ? Likelihood::gaussian : Likelihood::bernoulli_logit;
    m.arch.tau = model.tau;
    return m;
  }
};

namespace detail {

/// Paths are taken as given when absolute or locally present; otherwise the
/// SLANG_DATA_DIR environment directory is consulted.
inline std::string resolve_data_path(const std::string& p) {
  namespace fs = std::filesystem;
  fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return p;
  if (const char* env = std::getenv("SLANG_DATA_DIR")) {
    fs::path alt = fs::path(env) / path;
    if (fs::exists(alt)) return alt.string();
  }
  return p;
}

inline std::ifstream open_data_file(const std::string& spec_path) {
  const std::string path = resolve_data_path(spec_path);
  std::ifstream in(path);
  if (!in) throw config_error("cannot open dataset file '" + spec_path + "'");
  return in;
}

/// Train/test pair for one split index under a master seed.
inline std::pair<Dataset, Dataset> load_split(const DatasetSpec& spec, std::uint64_t master_seed,
                                              int split_index) {
  const std::uint64_t split_seed =
      derive_seed(master_seed, 600, static_cast<std::uint64_t>(split_index));
  if (spec.kind == "cubic_toy") {
    Dataset all = make_cubic_toy(spec.toy_n, derive_seed(master_seed, 500));
    return split(all, SplitSpec{spec.train_fraction, split_seed, spec.standardize});
  }

  if (!spec.test.empty()) {
    // fixed train/test pair; splits only vary the training randomness
    if (spec.kind == "csv") {
      std::ifstream tr = open_data_file(spec.train);
      std::ifstream te = open_data_file(spec.test);
      return {read_csv(tr), read_csv(te)};
    }
    std::ifstream tr = open_data_file(spec.train);
    std::ifstream te = open_data_file(spec.test);
    return parse_libsvm_pair(tr, te);
  }

  Dataset all;
  if (spec.kind == "csv") {
    std::ifstream in = open_data_file(spec.train);
    all = read_csv(in);
  } else {
    std::ifstream in = open_data_file(spec.train);
    all = parse_libsvm(in);
  }
  return split(all, SplitSpec{spec.train_fraction, split_seed, spec.standardize});
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "epoch,step,neg_elbo,test_nll\n";
  for (const TraceRow& r : trace) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.step) + ',' +
           format_double(r.neg_elbo) + ',';
    if (std::isfinite(r.test_nll)) out += format_double(r.test_nll);
    out += '\n';
  }
  return out;
}

struct MetricAccumulator {
  std::vector<double> values;
  void add(double v) {
    if (std::isfinite(v)) values.push_back(v);
  }
  nlohmann::json summary() const {
    if (values.empty())
      return nlohmann::json{{"mean", nullptr}, {"se", nullptr}, {"count", 0}};
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double se = values.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
    return nlohmann::json{{"mean", mean}, {"se", se}, {"count", values.size()}};
  }
};

}  // namespace detail

struct ExperimentOutcome {
  nlohmann::json report;
  // auxiliary artifacts as (file name, content), traces and optional states
  std::vector<std::pair<std::string, std::string>> files;
};

/// Runs the configured experiment over its splits and restarts. Everything is
/// derived deterministically from `seed`; repeated invocations produce
/// byte-identical reports and artifacts.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  ExperimentOutcome out;
  nlohmann::json runs = nlohmann::json::array();
  detail::MetricAccumulator agg_elbo, agg_nll, agg_rmse;
  int diverged_count = 0;
  bool any_regression = false;

  for (int split_index = 0; split_index < cfg.run.splits; ++split_index) {
    auto [train_ds, test_ds] = detail::load_split(cfg.dataset, seed, split_index);
    const Model model = cfg.build_model(train_ds.d());
    const bool regression = !train_ds.classification;
    any_regression = any_regression || regression;

    for (int restart = 0; restart < cfg.run.restarts; ++restart) {
      const std::uint64_t run_seed = derive_seed(seed, static_cast<std::uint64_t>(split_index),
                                                 static_cast<std::uint64_t>(restart), 1);
      TrainOptions o;
      o.method = cfg.method;
      o.opt = cfg.optimizer;
      o.minibatch = cfg.minibatch;
      o.epochs = cfg.run.epochs;
      o.seed = run_seed;
      o.trace_samples = cfg.run.trace_samples;
      o.trace_stride = cfg.run.trace_stride;
      o.test = cfg.run.trace_test_nll ? &test_ds : nullptr;
      o.trace_test_samples = cfg.run.trace_test_samples;

      nlohmann::json row{{"split", split_index}, {"restart", restart}, {"seed", run_seed}};
      const std::string tag =
          "s" + std::to_string(split_index) + "_r" + std::to_string(restart);
      RngStream metrics_rng(derive_seed(run_seed, 99));
      const double nan = std::numeric_limits<double>::quiet_NaN();
      double neg_elbo = nan, test_nll = nan, rmse_value = nan;
      bool diverged = false;
      long steps = 0;

      if (is_dense_method(cfg.method)) {
        DenseTrainResult r = train_dense(model, train_ds, o);
        diverged = r.diverged;
        steps = r.steps;
        if (!diverged) {
          neg_elbo = negative_elbo(model, train_ds, r.state, cfg.optimizer.prior_precision,
                                   cfg.run.eval_samples, metrics_rng);
          test_nll = predictive_nll(model, test_ds, r.state, cfg.run.eval_samples, metrics_rng);
        }
        out.files.emplace_back("trace_" + tag + ".csv", detail::trace_csv(r.trace));
        if (cfg.run.save_states)
          out.files.emplace_back("state_" + tag + ".json", state_to_json(r.state).dump(2) + "\n");
      } else {
        TrainResult r = train(model, train_ds, o);
        diverged = r.diverged;
        steps = r.steps;
        if (!diverged) {
          neg_elbo = negative_elbo(model, train_ds, r.state, cfg.optimizer.prior_precision,
                                   cfg.run.eval_samples, metrics_rng);
          test_nll = predictive_nll(model, test_ds, r.state, cfg.run.eval_samples, metrics_rng);
          if (regression)
            rmse_value = rmse(model, test_ds, r.state, cfg.run.eval_samples, metrics_rng);
        }
        out.files.emplace_back("trace_" + tag + ".csv", detail::trace_csv(r.trace));
        if (cfg.run.save_states)
          out.files.emplace_back("state_" + tag + ".json", state_to_json(r.state).dump(2) + "\n");
      }

      row["diverged"] = diverged;
      row["steps"] = steps;
      row["neg_elbo"] = neg_elbo;
      row["test_nll"] = test_nll;
      if (regression) row["rmse"] = rmse_value;
      if (diverged)
        ++diverged_count;
      else {
        agg_elbo.add(neg_elbo);
        agg_nll.add(test_nll);
        if (regression) agg_rmse.add(rmse_value);
      }
      runs.push_back(std::move(row));
    }
  }

  nlohmann::json aggregate{{"neg_elbo", agg_elbo.summary()}, {"test_nll", agg_nll.summary()}};
  if (any_regression) aggregate["rmse"] = agg_rmse.summary();
  out.report = nlohmann::json{{"format_version", 1},
                              {"name", cfg.name},
                              {"method", method_name(cfg.method)},
                              {"seed", seed},
                              {"config", cfg.to_json()},
                              {"runs", std::move(runs)},
                              {"aggregate", std::move(aggregate)},
                              {"diverged_runs", diverged_count}};
  return out;
}

}  // namespace slang
