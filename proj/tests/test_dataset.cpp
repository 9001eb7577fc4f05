#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "slang/dataset.hpp"
#include "slang/errors.hpp"

using Eigen::Index;

namespace {

slang::Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return slang::parse_libsvm(in);
}

}  // namespace

TEST_CASE("parse_libsvm densifies with a trailing bias column", "[dataset]") {
  auto ds = parse(
      "# tiny example\n"
      "+1 1:0.5 3:-1.25\n"
      "-1 1:-2\n");
  REQUIRE(ds.n() == 2);
  REQUIRE(ds.d() == 4);
  REQUIRE(ds.has_bias_column);
  REQUIRE(ds.classification);
  REQUIRE(ds.features(0, 0) == 0.5);
  REQUIRE(ds.features(0, 1) == 0.0);
  REQUIRE(ds.features(0, 2) == -1.25);
  REQUIRE(ds.features(0, 3) == 1.0);
  REQUIRE(ds.features(1, 0) == -2.0);
  REQUIRE(ds.features(1, 3) == 1.0);
  REQUIRE(ds.targets(0) == 1.0);
  REQUIRE(ds.targets(1) == 0.0);
}

TEST_CASE("parse_libsvm accepts inline comments and blank lines", "[dataset]") {
  auto ds = parse("\n+1 1:1 # trailing note\n\n-1 2:3\n");
  REQUIRE(ds.n() == 2);
  REQUIRE(ds.d() == 3);
  REQUIRE(ds.features(1, 1) == 3.0);
}

TEST_CASE("parse_libsvm maps any two distinct labels onto {0,1}", "[dataset]") {
  auto pm = parse("+1 1:1\n-1 1:2\n");
  REQUIRE(pm.targets(0) == 1.0);
  REQUIRE(pm.targets(1) == 0.0);

  // The 2/4 convention used by some medical datasets: smaller label -> 0.
  auto med = parse("2 1:1\n4 1:2\n2 1:3\n");
  REQUIRE(med.targets(0) == 0.0);
  REQUIRE(med.targets(1) == 1.0);
  REQUIRE(med.targets(2) == 0.0);

  auto zo = parse("0 1:1\n1 1:2\n");
  REQUIRE(zo.targets(0) == 0.0);
  REQUIRE(zo.targets(1) == 1.0);
}

TEST_CASE("parse_libsvm reports malformed input with line numbers", "[dataset]") {
  auto expect_line = [](const std::string& text, std::size_t line) {
    std::istringstream in(text);
    try {
      slang::parse_libsvm(in);
      FAIL("expected parse_error");
    } catch (const slang::parse_error& e) {
      REQUIRE(e.line_number == line);
    }
  };
  expect_line("+1 1:1\n-1 5:x\n", 2);              // bad value token
  expect_line("+1 1:1 1:2\n", 1);                  // duplicate index
  expect_line("+1 3:1 2:4\n", 1);                  // decreasing index
  expect_line("+1 0:1\n", 1);                      // index must be 1-based
  expect_line("abc 1:1\n", 1);                     // bad label token
  expect_line("+1 1:1\n2 1:1\n\n3 1:1\n", 4);      // third distinct label
  expect_line("7 1:1\n7 1:2\n", 1);                // unmappable single label
  expect_line("", 1);                              // no data at all
}

TEST_CASE("parse_libsvm accepts single-label degenerate files", "[dataset]") {
  REQUIRE(parse("+1 1:1\n+1 1:2\n").targets.sum() == 2.0);
  REQUIRE(parse("-1 1:1\n").targets.sum() == 0.0);
}

TEST_CASE("libsvm serialization round-trips bit-exactly", "[dataset]") {
  slang::RngStream rng(404);
  // Random sparse block; the last feature column is guaranteed occupied so
  // the dimension survives the sparse format.
  const Index n = 17, k = 9;
  std::ostringstream text;
  for (Index i = 0; i < n; ++i) {
    text << (rng.below(2) ? "+1" : "-1");
    for (Index j = 0; j < k; ++j) {
      const bool last = (j == k - 1) && (i % 3 == 0);
      if (rng.below(3) == 0 || last) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), " %ld:%.17g", static_cast<long>(j + 1),
                      rng.normal() * std::pow(10.0, static_cast<double>(rng.below(7)) - 3.0));
        text << buf;
      }
    }
    text << "\n";
  }
  auto first = parse(text.str());
  std::ostringstream out;
  slang::serialize_libsvm(first, out);
  auto second = parse(out.str());
  REQUIRE(first.features == second.features);
  REQUIRE(first.targets == second.targets);
  REQUIRE(second.has_bias_column);
}

TEST_CASE("csv cache round-trips datasets bit-exactly", "[dataset]") {
  slang::RngStream rng(77);
  slang::Dataset ds;
  ds.features.resize(6, 3);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 3; ++j) ds.features(i, j) = rng.normal() * 1e3;
  ds.targets.resize(6);
  for (Index i = 0; i < 6; ++i) ds.targets(i) = rng.normal();
  ds.classification = false;
  ds.has_bias_column = false;

  std::ostringstream out;
  slang::write_csv(ds, out);
  std::istringstream in(out.str());
  auto back = slang::read_csv(in);
  REQUIRE(back.features == ds.features);
  REQUIRE(back.targets == ds.targets);
  REQUIRE(back.classification == false);
  REQUIRE(back.has_bias_column == false);

  auto cls = parse("+1 1:0.125 2:3\n-1 2:-7\n");
  std::ostringstream out2;
  slang::write_csv(cls, out2);
  std::istringstream in2(out2.str());
  auto back2 = slang::read_csv(in2);
  REQUIRE(back2.features == cls.features);
  REQUIRE(back2.targets == cls.targets);
  REQUIRE(back2.classification);
  REQUIRE(back2.has_bias_column);
}

TEST_CASE("paired loading unifies the feature dimension", "[dataset]") {
  std::istringstream train("+1 1:1 3:2\n-1 2:1\n");
  std::istringstream test("-1 5:4\n");
  auto [tr, te] = slang::parse_libsvm_pair(train, test);
  REQUIRE(tr.d() == 6);
  REQUIRE(te.d() == 6);
  REQUIRE(te.features(0, 4) == 4.0);
  REQUIRE(tr.features(0, 5) == 1.0);  // bias
  REQUIRE(te.features(0, 5) == 1.0);
}

TEST_CASE("paired loading unifies label mapping across files", "[dataset]") {
  std::istringstream train("2 1:1\n2 1:2\n");
  std::istringstream test("4 1:3\n");
  auto [tr, te] = slang::parse_libsvm_pair(train, test);
  REQUIRE(tr.targets(0) == 0.0);
  REQUIRE(te.targets(0) == 1.0);
}

TEST_CASE("make_cubic_toy draws x in [-4,4] with cubic mean and noise", "[dataset]") {
  auto ds = slang::make_cubic_toy(30, 99);
  REQUIRE(ds.n() == 30);
  REQUIRE(ds.d() == 1);
  REQUIRE_FALSE(ds.classification);
  REQUIRE_FALSE(ds.has_bias_column);
  double resid_sq = 0.0;
  for (Index i = 0; i < 30; ++i) {
    REQUIRE(ds.features(i, 0) >= -4.0);
    REQUIRE(ds.features(i, 0) <= 4.0);
    const double r = ds.targets(i) - std::pow(ds.features(i, 0), 3);
    resid_sq += r * r;
  }
  // Noise variance is 9; a 30-sample estimate lands well inside [3, 20].
  REQUIRE(resid_sq / 30.0 >= 3.0);
  REQUIRE(resid_sq / 30.0 <= 20.0);

  auto again = slang::make_cubic_toy(30, 99);
  REQUIRE(again.features == ds.features);
  REQUIRE(again.targets == ds.targets);
  REQUIRE(slang::make_cubic_toy(30, 100).targets != ds.targets);
}

TEST_CASE("split partitions rows and is seed-deterministic", "[dataset]") {
  slang::Dataset ds;
  ds.features.resize(10, 1);
  ds.targets.resize(10);
  for (Index i = 0; i < 10; ++i) {
    ds.features(i, 0) = static_cast<double>(i);
    ds.targets(i) = static_cast<double>(i % 2);
  }
  slang::SplitSpec spec;
  spec.train_fraction = 0.5;
  spec.seed = 5;
  auto [tr, te] = slang::split(ds, spec);
  REQUIRE(tr.n() == 5);
  REQUIRE(te.n() == 5);
  std::vector<int> seen(10, 0);
  for (Index i = 0; i < 5; ++i) {
    seen[static_cast<int>(tr.features(i, 0))]++;
    seen[static_cast<int>(te.features(i, 0))]++;
  }
  for (int s : seen) REQUIRE(s == 1);

  auto [tr2, te2] = slang::split(ds, spec);
  REQUIRE(tr2.features == tr.features);
  spec.seed = 6;
  auto [tr3, te3] = slang::split(ds, spec);
  REQUIRE(tr3.features != tr.features);
}

TEST_CASE("split standardization fits on train and applies to both", "[dataset]") {
  slang::RngStream rng(314);
  slang::Dataset ds;
  const Index n = 40;
  ds.features.resize(n, 3);
  ds.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    ds.features(i, 0) = 5.0 + 2.0 * rng.normal();
    ds.features(i, 1) = -3.0 + 0.25 * rng.normal();
    ds.features(i, 2) = 1.0;  // constant column stays untouched
    ds.targets(i) = static_cast<double>(rng.below(2));
  }
  ds.has_bias_column = true;
  slang::SplitSpec spec;
  spec.train_fraction = 0.5;
  spec.seed = 12;
  spec.standardize = true;
  auto [tr, te] = slang::split(ds, spec);
  for (Index j = 0; j < 2; ++j) {
    const double mean = tr.features.col(j).mean();
    const double sd = std::sqrt((tr.features.col(j).array() - mean).square().sum() /
                                static_cast<double>(tr.n() - 1));
    REQUIRE(std::abs(mean) <= 1e-10);
    REQUIRE(std::abs(sd - 1.0) <= 1e-10);
  }
  REQUIRE((tr.features.col(2).array() == 1.0).all());
  REQUIRE((te.features.col(2).array() == 1.0).all());

  // Test rows use the train statistics, not their own.
  auto [tr_raw, te_raw] = slang::split(ds, slang::SplitSpec{0.5, 12, false});
  const double m0 = tr_raw.features.col(0).mean();
  const double s0 = std::sqrt((tr_raw.features.col(0).array() - m0).square().sum() /
                              static_cast<double>(tr_raw.n() - 1));
  REQUIRE(std::abs(te.features(0, 0) - (te_raw.features(0, 0) - m0) / s0) <= 1e-12);
}
