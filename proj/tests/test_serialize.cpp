#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <filesystem>

#include "slang/errors.hpp"
#include "slang/optimizers.hpp"
#include "slang/rng.hpp"
#include "slang/serialize.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

slang::GaussianState make_state(std::uint64_t seed) {
  slang::OptimizerConfig cfg;
  cfg.rank = 2;
  cfg.n_total = 10;
  slang::GaussianState s = slang::init_state(cfg, 4);
  slang::RngStream rng(seed);
  MatrixXd u(4, 2);
  VectorXd d(4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    s.mean(i) = rng.normal();
    s.momentum(i) = rng.normal();
    d(i) = 0.5 + rng.uniform();
    for (Eigen::Index j = 0; j < 2; ++j) u(i, j) = rng.normal();
  }
  s.precision = slang::LowRankDiagMatrix(u, d);
  s.step = 123;
  return s;
}

}  // namespace

TEST_CASE("structured state json round trip is exact", "[serialize]") {
  slang::GaussianState s = make_state(1);
  nlohmann::json j = slang::state_to_json(s);
  REQUIRE(j.at("format_version") == 1);
  REQUIRE(j.at("kind") == "structured");
  REQUIRE(slang::state_kind(j) == "structured");

  // through text, so the comparison covers number formatting as well
  nlohmann::json reparsed = nlohmann::json::parse(j.dump());
  slang::GaussianState back = slang::state_from_json(reparsed);
  REQUIRE(back.mean == s.mean);
  REQUIRE(back.momentum == s.momentum);
  REQUIRE(back.precision.u() == s.precision.u());
  REQUIRE(back.precision.diag() == s.precision.diag());
  REQUIRE(back.step == s.step);
}

TEST_CASE("dense state json round trip is exact", "[serialize]") {
  slang::OptimizerConfig cfg;
  cfg.n_total = 10;
  cfg.prior_precision = 0.7;
  slang::DenseGaussianState s = slang::init_dense_state(cfg, 3);
  slang::RngStream rng(9);
  for (Eigen::Index i = 0; i < 3; ++i) {
    s.mean(i) = rng.normal();
    for (Eigen::Index j = 0; j < 3; ++j) s.precision(i, j) += 0.01 * rng.uniform();
  }
  s.step = 7;

  nlohmann::json j = slang::state_to_json(s);
  REQUIRE(slang::state_kind(j) == "dense");
  slang::DenseGaussianState back = slang::dense_state_from_json(nlohmann::json::parse(j.dump()));
  REQUIRE(back.mean == s.mean);
  REQUIRE(back.precision == s.precision);
  REQUIRE(back.momentum == s.momentum);
  REQUIRE(back.step == s.step);
}

TEST_CASE("state files round trip", "[serialize]") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "slang_state_roundtrip.json";
  slang::GaussianState s = make_state(2);
  slang::save_json(path.string(), slang::state_to_json(s));
  slang::GaussianState back = slang::state_from_json(slang::load_json(path.string()));
  REQUIRE(back.mean == s.mean);
  REQUIRE(back.precision.u() == s.precision.u());
  fs::remove(path);

  REQUIRE_THROWS_AS(slang::load_json((fs::temp_directory_path() / "missing_9z.json").string()),
                    slang::parse_error);
}

TEST_CASE("malformed state payloads are rejected", "[serialize]") {
  nlohmann::json good = slang::state_to_json(make_state(3));

  nlohmann::json bad = good;
  bad["format_version"] = 2;
  REQUIRE_THROWS_AS(slang::state_from_json(bad), slang::parse_error);

  bad = good;
  bad["kind"] = "dense";
  REQUIRE_THROWS_AS(slang::state_from_json(bad), slang::parse_error);

  bad = good;
  bad["u"].erase(0);
  REQUIRE_THROWS_AS(slang::state_from_json(bad), slang::parse_error);

  bad = good;
  bad.erase("mean");
  REQUIRE_THROWS_AS(slang::state_from_json(bad), slang::parse_error);

  bad = good;
  bad["diag"][0] = -1.0;  // invalid precision diagonal
  REQUIRE_THROWS_AS(slang::state_from_json(bad), slang::config_error);
}
