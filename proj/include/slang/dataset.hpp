#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "slang/errors.hpp"
#include "slang/rng.hpp"

namespace slang {

/// Dense supervised dataset. Classification targets are 0/1 after ingestion;
/// LIBSVM-ingested sets carry a constant-1 bias column as their last feature.
struct Dataset {
  Eigen::MatrixXd features;  // n x d
  Eigen::VectorXd targets;   // n
  bool classification = true;
  bool has_bias_column = false;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index d() const { return features.cols(); }
};

inline void validate_dataset(const Dataset& ds) {
  if (ds.features.rows() != ds.targets.size())
    throw config_error("dataset: features and targets disagree on the number of rows");
  if (!ds.features.allFinite() || !ds.targets.allFinite())
    throw config_error("dataset: non-finite entries");
  if (ds.classification && !((ds.targets.array() == 0.0) || (ds.targets.array() == 1.0)).all())
    throw config_error("dataset: classification targets must be 0 or 1");
}

namespace detail {

struct SparseFile {
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows;
  std::vector<double> raw_labels;
  Eigen::Index max_index = 0;
  // Distinct raw labels in order of first appearance, with the line that
  // introduced each (for error reporting).
  std::vector<std::pair<double, std::size_t>> distinct;
};

inline double parse_double_token(const std::string& tok, std::size_t line, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || !std::isfinite(v))
    throw parse_error(line, std::string("bad ") + what + " '" + tok + "'");
  return v;
}

inline SparseFile read_sparse(std::istream& in) {
  SparseFile f;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
      while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      const std::size_t start = pos;
      while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      return line.substr(start, pos - start);
    };
    const std::string label_tok = next_token();
    if (label_tok.empty()) continue;  // blank or comment-only line

    const double label = parse_double_token(label_tok, lineno, "label");
    bool known = false;
    for (auto& [v, ln] : f.distinct) known |= (v == label);
    if (!known) {
      if (f.distinct.size() == 2)
        throw parse_error(lineno, "more than two distinct labels; expected a binary problem");
      f.distinct.emplace_back(label, lineno);
    }

    std::vector<std::pair<Eigen::Index, double>> row;
    Eigen::Index prev = 0;
    for (std::string tok = next_token(); !tok.empty(); tok = next_token()) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw parse_error(lineno, "expected index:value, got '" + tok + "'");
      char* end = nullptr;
      const std::string idx_str = tok.substr(0, colon);
      const long idx = std::strtol(idx_str.c_str(), &end, 10);
      if (end == idx_str.c_str() || *end != '\0' || idx < 1)
        throw parse_error(lineno, "feature indices must be positive integers, got '" + idx_str + "'");
      if (idx <= prev) throw parse_error(lineno, "feature indices must be strictly increasing");
      prev = idx;
      const double v = parse_double_token(tok.substr(colon + 1), lineno, "feature value");
      row.emplace_back(static_cast<Eigen::Index>(idx), v);
      f.max_index = std::max<Eigen::Index>(f.max_index, idx);
    }
    f.rows.push_back(std::move(row));
    f.raw_labels.push_back(label);
  }
  if (f.rows.empty()) throw parse_error(std::max<std::size_t>(lineno, 1), "no examples found");
  return f;
}

// Binary label mapping: with two distinct raw labels the smaller becomes 0;
// with one, only -1/0 -> 0 and +1 -> 1 are unambiguous.
inline double map_label(double raw, const std::vector<std::pair<double, std::size_t>>& distinct) {
  if (distinct.size() == 2) {
    const double lo = std::min(distinct[0].first, distinct[1].first);
    return raw == lo ? 0.0 : 1.0;
  }
  const double only = distinct[0].first;
  if (only == -1.0 || only == 0.0) return 0.0;
  if (only == 1.0) return 1.0;
  throw parse_error(distinct[0].second,
                    "single label value cannot be mapped onto {0,1}");
}

inline Dataset densify(const SparseFile& f,
                       const std::vector<std::pair<double, std::size_t>>& distinct,
                       Eigen::Index n_features) {
  Dataset ds;
  const auto n = static_cast<Eigen::Index>(f.rows.size());
  ds.features = Eigen::MatrixXd::Zero(n, n_features + 1);
  ds.targets.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const auto& [idx, v] : f.rows[static_cast<std::size_t>(i)]) ds.features(i, idx - 1) = v;
    ds.features(i, n_features) = 1.0;
    ds.targets(i) = map_label(f.raw_labels[static_cast<std::size_t>(i)], distinct);
  }
  ds.classification = true;
  ds.has_bias_column = true;
  validate_dataset(ds);
  return ds;
}

}  // namespace detail

/// Reads LIBSVM text: `<label> idx:value ...` with 1-based strictly
/// increasing indices and `#` comments. The feature dimension is the largest
/// index seen; a constant-1 bias column is appended after it. Any two
/// distinct labels are accepted and mapped {smaller,larger} -> {0,1}.
/// Malformed input raises parse_error carrying the offending line number.
inline Dataset parse_libsvm(std::istream& in) {
  auto f = detail::read_sparse(in);
  return detail::densify(f, f.distinct, f.max_index);
}

/// Reads a pre-split train/test pair with a shared feature dimension (the
/// max index across both files) and a shared label mapping.
inline std::pair<Dataset, Dataset> parse_libsvm_pair(std::istream& train, std::istream& test) {
  auto ftr = detail::read_sparse(train);
  auto fte = detail::read_sparse(test);
  auto joint = ftr.distinct;
  for (const auto& dv : fte.distinct) {
    bool known = false;
    for (const auto& jv : joint) known |= (jv.first == dv.first);
    if (!known) {
      if (joint.size() == 2)
        throw parse_error(dv.second, "train/test label sets combine to more than two labels");
      joint.push_back(dv);
    }
  }
  const Eigen::Index n_features = std::max(ftr.max_index, fte.max_index);
  return {detail::densify(ftr, joint, n_features), detail::densify(fte, joint, n_features)};
}

/// Writes LIBSVM text (sparse, zeros skipped, 17 significant digits). The
/// bias column, when present, is not written; parsing re-appends it.
inline void serialize_libsvm(const Dataset& ds, std::ostream& out) {
  const Eigen::Index k = ds.d() - (ds.has_bias_column ? 1 : 0);
  char buf[64];
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", ds.targets(i));
    out << buf;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (ds.features(i, j) == 0.0) continue;
      std::snprintf(buf, sizeof(buf), " %ld:%.17g", static_cast<long>(j + 1), ds.features(i, j));
      out << buf;
    }
    out << '\n';
  }
}

/// Dense CSV cache. Header names encode the dataset flags: a final feature
/// column named `bias` marks has_bias_column, and the target column is
/// `label` for classification, `target` for regression.
inline void write_csv(const Dataset& ds, std::ostream& out) {
  const Eigen::Index d = ds.d();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (ds.has_bias_column && j == d - 1)
      out << "bias,";
    else
      out << 'f' << (j + 1) << ',';
  }
  out << (ds.classification ? "label" : "target") << '\n';
  char buf[64];
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g,", ds.features(i, j));
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", ds.targets(i));
    out << buf << '\n';
  }
}

inline Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw parse_error(1, "missing CSV header");
  std::vector<std::string> names;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    const auto comma = line.find(',', pos);
    names.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (names.size() < 2) throw parse_error(1, "CSV header needs at least one feature and a target");
  Dataset ds;
  ds.classification = (names.back() == "label");
  if (!ds.classification && names.back() != "target")
    throw parse_error(1, "last CSV column must be 'label' or 'target'");
  ds.has_bias_column = (names[names.size() - 2] == "bias");

  const std::size_t d = names.size() - 1;
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t cell = 0, col = 0;
    while (cell <= line.size()) {
      const auto comma = line.find(',', cell);
      const std::string tok =
          line.substr(cell, comma == std::string::npos ? std::string::npos : comma - cell);
      values.push_back(detail::parse_double_token(tok, lineno, "CSV cell"));
      ++col;
      if (comma == std::string::npos) break;
      cell = comma + 1;
    }
    if (col != d + 1) throw parse_error(lineno, "CSV row has the wrong number of columns");
  }
  const auto n = static_cast<Eigen::Index>(values.size() / (d + 1));
  if (n == 0) throw parse_error(lineno, "no CSV rows");
  ds.features.resize(n, static_cast<Eigen::Index>(d));
  ds.targets.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j)
      ds.features(i, j) = values[static_cast<std::size_t>(i) * (d + 1) + static_cast<std::size_t>(j)];
    ds.targets(i) = values[static_cast<std::size_t>(i) * (d + 1) + d];
  }
  validate_dataset(ds);
  return ds;
}

/// Synthetic 1-d regression set: x ~ U[-4,4], y = x^3 + eps with
/// eps ~ N(0, 9). One feature column, no bias, regression targets.
inline Dataset make_cubic_toy(Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw config_error("make_cubic_toy: n must be positive");
  Dataset ds;
  ds.features.resize(n, 1);
  ds.targets.resize(n);
  RngStream rng(seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = rng.uniform(-4.0, 4.0);
    ds.features(i, 0) = x;
    ds.targets(i) = x * x * x + 3.0 * rng.normal();
  }
  ds.classification = false;
  ds.has_bias_column = false;
  return ds;
}

struct SplitSpec {
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
  bool standardize = false;
};

/// Random train/test split via a seeded Fisher-Yates shuffle;
/// floor(n * fraction) rows go to train. With standardize on, per-column
/// mean/sd are fitted on train and applied to both sides; constant columns
/// (the bias in particular) are left untouched.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  const Eigen::Index n = ds.n();
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw config_error("split: train_fraction must lie in (0,1)");
  const auto n_train = static_cast<Eigen::Index>(
      std::floor(static_cast<double>(n) * spec.train_fraction));
  if (n_train < 1 || n_train >= n) throw config_error("split: degenerate split");

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  RngStream rng(spec.seed);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i) + 1))]);

  auto take = [&](Eigen::Index begin, Eigen::Index count) {
    Dataset out;
    out.features.resize(count, ds.d());
    out.targets.resize(count);
    out.classification = ds.classification;
    out.has_bias_column = ds.has_bias_column;
    for (Eigen::Index i = 0; i < count; ++i) {
      out.features.row(i) = ds.features.row(perm[static_cast<std::size_t>(begin + i)]);
      out.targets(i) = ds.targets(perm[static_cast<std::size_t>(begin + i)]);
    }
    return out;
  };
  Dataset train = take(0, n_train);
  Dataset test = take(n_train, n - n_train);

  if (spec.standardize && train.n() >= 2) {
    for (Eigen::Index j = 0; j < ds.d(); ++j) {
      const double mean = train.features.col(j).mean();
      const double sd = std::sqrt((train.features.col(j).array() - mean).square().sum() /
                                  static_cast<double>(train.n() - 1));
      if (sd <= 1e-12) continue;
      train.features.col(j) = (train.features.col(j).array() - mean) / sd;
      test.features.col(j) = (test.features.col(j).array() - mean) / sd;
    }
  }
  return {std::move(train), std::move(test)};
}

}  // namespace slang
