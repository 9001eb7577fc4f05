#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "slang/experiment.hpp"
#include "slang/metrics.hpp"
#include "slang/selftest.hpp"
#include "slang/serialize.hpp"

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw slang::config_error("cannot open '" + path.string() + "' for writing");
  out << content;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void print_metric(const char* label, const nlohmann::json& m) {
  if (m.at("mean").is_null()) {
    std::cout << label << ": n/a (no completed runs)\n";
    return;
  }
  std::cout << label << ": " << fmt(m.at("mean").get<double>()) << " +/- "
            << fmt(m.at("se").get<double>()) << "  (n=" << m.at("count").get<int>() << ")\n";
}

int do_run(const std::string& config_path, std::uint64_t seed, std::string out_dir,
           long epochs_override, bool timing) {
  slang::ExperimentConfig cfg =
      slang::ExperimentConfig::from_json(slang::load_json(config_path));
  if (epochs_override >= 0) cfg.run.epochs = epochs_override;
  if (out_dir.empty()) out_dir = "runs/" + cfg.name;

  const auto t0 = std::chrono::steady_clock::now();
  slang::ExperimentOutcome outcome = slang::run_experiment(cfg, seed);
  const auto t1 = std::chrono::steady_clock::now();

  fs::create_directories(out_dir);
  slang::save_json(out_dir + "/report.json", outcome.report);
  for (const auto& [name, content] : outcome.files) write_file(fs::path(out_dir) / name, content);

  std::cout << "experiment: " << cfg.name << "\n";
  std::cout << "method: " << slang::method_name(cfg.method) << "\n";
  std::cout << "runs: " << outcome.report.at("runs").size()
            << " (diverged: " << outcome.report.at("diverged_runs").get<int>() << ")\n";
  const auto& agg = outcome.report.at("aggregate");
  print_metric("neg_elbo", agg.at("neg_elbo"));
  print_metric("test_nll", agg.at("test_nll"));
  if (agg.contains("rmse")) print_metric("rmse", agg.at("rmse"));
  std::cout << "wrote " << out_dir << "/report.json and " << outcome.files.size()
            << " auxiliary files\n";
  if (timing) {
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    std::cerr << "elapsed_seconds=" << fmt(sec) << "\n";
  }
  return 0;
}

slang::DenseGaussian load_moments(const std::string& path) {
  nlohmann::json j = slang::load_json(path);
  if (slang::state_kind(j) == "dense") return slang::densify(slang::dense_state_from_json(j));
  return slang::densify(slang::state_from_json(j));
}

int do_dump_cov(const std::string& state_path, const std::string& ref_path,
                const std::string& out_dir) {
  slang::DenseGaussian g = load_moments(state_path);
  const Eigen::Index dim = g.mean.size();
  fs::create_directories(out_dir);

  std::string mean_csv = "index,mean\n";
  std::string var_csv = "index,variance\n";
  for (Eigen::Index i = 0; i < dim; ++i) {
    mean_csv += std::to_string(i) + ',' + slang::detail::format_double(g.mean(i)) + '\n';
    var_csv += std::to_string(i) + ',' + slang::detail::format_double(g.covariance(i, i)) + '\n';
  }
  // symmetric, so the upper triangle carries the full matrix
  std::string cov_csv = "row,col,value\n";
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = i; j < dim; ++j)
      cov_csv += std::to_string(i) + ',' + std::to_string(j) + ',' +
                 slang::detail::format_double(g.covariance(i, j)) + '\n';
  write_file(fs::path(out_dir) / "mean.csv", mean_csv);
  write_file(fs::path(out_dir) / "variances.csv", var_csv);
  write_file(fs::path(out_dir) / "covariance.csv", cov_csv);
  std::cout << "dimension: " << dim << "\n";
  std::cout << "wrote mean.csv, variances.csv, covariance.csv to " << out_dir << "\n";

  if (!ref_path.empty()) {
    slang::DenseGaussian ref = load_moments(ref_path);
    std::cout << "kl(state || ref): " << fmt(slang::kl_divergence(g, ref)) << "\n";
    std::cout << "kl(ref || state): " << fmt(slang::kl_divergence(ref, g)) << "\n";
    std::cout << "symmetric kl: " << fmt(slang::symmetric_kl(g, ref)) << "\n";
  }
  return 0;
}

int do_selftest() {
  int failures = 0;
  for (const slang::SelftestResult& r : slang::run_selftest()) {
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name;
    if (!r.detail.empty()) std::cout << ": " << r.detail;
    std::cout << "\n";
    failures += r.passed ? 0 : 1;
  }
  if (failures > 0) {
    std::cout << failures << " check(s) failed\n";
    return 1;
  }
  std::cout << "all checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational inference with low-rank plus diagonal Gaussian posteriors"};
  app.require_subcommand(1);

  std::string config_path, run_out;
  std::uint64_t seed = 0;
  long epochs_override = -1;
  bool timing = false;
  CLI::App* run_cmd = app.add_subcommand("run", "Run an experiment from a json configuration");
  run_cmd->add_option("config", config_path, "experiment configuration file")->required();
  run_cmd->add_option("--seed", seed, "master random seed; all runs derive from it")->required();
  run_cmd->add_option("--out", run_out, "output directory (default: runs/<name>)");
  run_cmd->add_option("--epochs", epochs_override, "override the configured epoch count");
  run_cmd->add_flag("--timing", timing, "report wall-clock time on stderr");

  std::string state_path, ref_path, cov_out;
  CLI::App* dump_cmd =
      app.add_subcommand("dump-cov", "Export posterior moments from a saved state");
  dump_cmd->add_option("state", state_path, "state file produced with save_states")->required();
  dump_cmd->add_option("--ref", ref_path, "reference state; prints divergences against it");
  dump_cmd->add_option("--out", cov_out, "output directory for the csv files")->required();

  CLI::App* self_cmd = app.add_subcommand("selftest", "Run built-in numerical health checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return do_run(config_path, seed, run_out, epochs_override, timing);
    if (dump_cmd->parsed()) return do_dump_cov(state_path, ref_path, cov_out);
    if (self_cmd->parsed()) return do_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
