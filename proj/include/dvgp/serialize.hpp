#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "dvgp/model.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix &m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json &j) {
  const Index rows = static_cast<Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const Index cols = static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto &row = j.at(static_cast<std::size_t>(i));
    require(static_cast<Index>(row.size()) == cols, "model file: ragged matrix");
    for (Index c = 0; c < cols; ++c) m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

inline nlohmann::json vector_to_json(const Vector &v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Vector vector_from_json(const nlohmann::json &j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

}  // namespace detail

/// Self-describing model container. Doubles survive the JSON round trip
/// exactly (shortest-representation printing), so a reloaded model
/// reproduces predictions bit for bit.
inline nlohmann::json model_to_json(const FittedModel &model) {
  nlohmann::json j;
  j["format"] = "dvgp-model";
  j["version"] = 1;
  j["mode"] = model.mode == Mode::gplvm ? "gplvm" : "sgpr";
  j["dims"] = {{"m", model.z.rows()},
               {"q", model.z.cols()},
               {"d", model.qu.mean.cols()},
               {"n_embeddings", model.mu.rows()}};
  j["seed"] = model.seed;
  j["final_elbo"] = model.elbo;
  j["z"] = detail::matrix_to_json(model.z);
  j["log_sigma_f_sq"] = model.log_sigma_f_sq;
  j["log_alpha"] = detail::vector_to_json(model.log_alpha);
  j["log_beta"] = model.log_beta;
  j["qu_mean"] = detail::matrix_to_json(model.qu.mean);
  j["qu_cov"] = detail::matrix_to_json(model.qu.cov);
  if (model.mode == Mode::gplvm) {
    j["mu"] = detail::matrix_to_json(model.mu);
    j["s"] = detail::matrix_to_json(model.s);
  }
  return j;
}

inline FittedModel model_from_json(const nlohmann::json &j) {
  require(j.value("format", "") == std::string("dvgp-model"), "model file: unrecognized format");
  FittedModel model;
  model.mode = j.at("mode").get<std::string>() == "gplvm" ? Mode::gplvm : Mode::regression;
  model.seed = j.at("seed").get<std::uint64_t>();
  model.elbo = j.at("final_elbo").get<double>();
  model.z = detail::matrix_from_json(j.at("z"));
  model.log_sigma_f_sq = j.at("log_sigma_f_sq").get<double>();
  model.log_alpha = detail::vector_from_json(j.at("log_alpha"));
  model.log_beta = j.at("log_beta").get<double>();
  model.qu.mean = detail::matrix_from_json(j.at("qu_mean"));
  model.qu.cov = detail::matrix_from_json(j.at("qu_cov"));
  if (model.mode == Mode::gplvm) {
    model.mu = detail::matrix_from_json(j.at("mu"));
    model.s = detail::matrix_from_json(j.at("s"));
  }
  return model;
}

inline void save_model(const FittedModel &model, const std::string &path) {
  std::ofstream out(path);
  require(out.good(), "save_model: cannot open " + path);
  out << model_to_json(model).dump(2) << "\n";
  require(out.good(), "save_model: write to " + path + " failed");
}

inline FittedModel load_model(const std::string &path) {
  std::ifstream in(path);
  require(in.good(), "load_model: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace dvgp
