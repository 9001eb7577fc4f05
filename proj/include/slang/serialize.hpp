#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <json.hpp>
#include <string>

#include "slang/errors.hpp"
#include "slang/optimizers.hpp"

namespace slang {

inline constexpr int kStateFormatVersion = 1;

namespace detail {

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

/// Row-major flattening, one array entry per coefficient.
inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  return a;
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw parse_error(0, std::string("state is missing field '") + key + "'");
  return *it;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& a, Eigen::Index size,
                                        const char* what) {
  if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != size)
    throw parse_error(0, std::string("field '") + what +
                             "' must be an array of length " + std::to_string(size));
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) v(i) = a.at(i).get<double>();
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& a, Eigen::Index rows,
                                        Eigen::Index cols, const char* what) {
  if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != rows * cols)
    throw parse_error(0, std::string("field '") + what +
                             "' must be an array of length " + std::to_string(rows * cols));
  Eigen::MatrixXd m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = a.at(k++).get<double>();
  return m;
}

inline void check_header(const nlohmann::json& j, const char* kind) {
  if (field(j, "format_version").get<int>() != kStateFormatVersion)
    throw parse_error(0, "unsupported state format version");
  if (field(j, "kind").get<std::string>() != kind)
    throw parse_error(0, std::string("state kind is not '") + kind + "'");
}

}  // namespace detail

inline std::string state_kind(const nlohmann::json& j) {
  return detail::field(j, "kind").get<std::string>();
}

inline nlohmann::json state_to_json(const GaussianState& s) {
  return nlohmann::json{{"format_version", kStateFormatVersion},
                        {"kind", "structured"},
                        {"dim", s.mean.size()},
                        {"rank", s.precision.rank()},
                        {"mean", detail::vector_to_json(s.mean)},
                        {"u", detail::matrix_to_json(s.precision.u())},
                        {"diag", detail::vector_to_json(s.precision.diag())},
                        {"momentum", detail::vector_to_json(s.momentum)},
                        {"step", s.step}};
}

inline nlohmann::json state_to_json(const DenseGaussianState& s) {
  return nlohmann::json{{"format_version", kStateFormatVersion},
                        {"kind", "dense"},
                        {"dim", s.mean.size()},
                        {"mean", detail::vector_to_json(s.mean)},
                        {"precision", detail::matrix_to_json(s.precision)},
                        {"momentum", detail::vector_to_json(s.momentum)},
                        {"step", s.step}};
}

inline GaussianState state_from_json(const nlohmann::json& j) {
  detail::check_header(j, "structured");
  const auto dim = detail::field(j, "dim").get<Eigen::Index>();
  const auto rank = detail::field(j, "rank").get<Eigen::Index>();
  if (dim < 1 || rank < 0 || rank > dim) throw parse_error(0, "invalid state dimensions");
  GaussianState s{detail::vector_from_json(detail::field(j, "mean"), dim, "mean"),
                  LowRankDiagMatrix(detail::matrix_from_json(detail::field(j, "u"), dim, rank, "u"),
                                    detail::vector_from_json(detail::field(j, "diag"), dim,
                                                             "diag")),
                  detail::vector_from_json(detail::field(j, "momentum"), dim, "momentum"),
                  detail::field(j, "step").get<long>()};
  return s;
}

inline DenseGaussianState dense_state_from_json(const nlohmann::json& j) {
  detail::check_header(j, "dense");
  const auto dim = detail::field(j, "dim").get<Eigen::Index>();
  if (dim < 1) throw parse_error(0, "invalid state dimensions");
  return DenseGaussianState{
      detail::vector_from_json(detail::field(j, "mean"), dim, "mean"),
      detail::matrix_from_json(detail::field(j, "precision"), dim, dim, "precision"),
      detail::vector_from_json(detail::field(j, "momentum"), dim, "momentum"),
      detail::field(j, "step").get<long>()};
}

inline void save_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(0, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(0, std::string("invalid json in '") + path + "': " + e.what());
  }
}

}  // namespace slang
