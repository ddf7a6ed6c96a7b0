#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "klid/svm.hpp"
#include "klid/weighting.hpp"

namespace klid {

// Everything needed to reproduce predictions exactly: kernel, expansion
// (features, labels, alphas) and bias. Full-length alpha/beta are training
// artifacts and are included for audit.
inline nlohmann::json model_to_json(const TrainedModel& model) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kernel"] = {{"family", "rbf"}, {"gamma", model.kernel.gamma}};
  j["bias"] = model.bias;
  j["converged"] = model.converged;
  j["support_ids"] = model.support_ids;
  j["alpha"] = std::vector<double>(model.alpha.data(), model.alpha.data() + model.alpha.size());
  j["beta"] = std::vector<double>(model.beta.data(), model.beta.data() + model.beta.size());
  j["sv_labels"] = model.sv_labels;
  j["sv_alpha"] = std::vector<double>(model.sv_alpha.data(), model.sv_alpha.data() + model.sv_alpha.size());
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < model.sv_features.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(model.sv_features.cols()));
    for (Eigen::Index c = 0; c < model.sv_features.cols(); ++c) row[static_cast<std::size_t>(c)] = model.sv_features(i, c);
    rows.push_back(row);
  }
  j["sv_features"] = rows;
  j["dim"] = model.sv_features.cols();
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != 1)
    throw std::runtime_error("model_from_json: unsupported format_version");
  TrainedModel m;
  m.kernel.gamma = j.at("kernel").at("gamma").get<double>();
  m.bias = j.at("bias").get<double>();
  m.converged = j.at("converged").get<bool>();
  m.support_ids = j.at("support_ids").get<std::vector<int>>();
  const auto alpha = j.at("alpha").get<std::vector<double>>();
  m.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  const auto beta = j.at("beta").get<std::vector<double>>();
  m.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  m.sv_labels = j.at("sv_labels").get<std::vector<int>>();
  const auto sv_alpha = j.at("sv_alpha").get<std::vector<double>>();
  m.sv_alpha = Eigen::Map<const Eigen::VectorXd>(sv_alpha.data(), static_cast<Eigen::Index>(sv_alpha.size()));
  const auto rows = j.at("sv_features");
  const Eigen::Index dim = j.at("dim").get<Eigen::Index>();
  m.sv_features.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = rows[i].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != dim)
      throw std::runtime_error("model_from_json: ragged sv_features");
    for (Eigen::Index c = 0; c < dim; ++c) m.sv_features(static_cast<Eigen::Index>(i), c) = row[static_cast<std::size_t>(c)];
  }
  if (m.sv_labels.size() != rows.size() || static_cast<std::size_t>(m.sv_alpha.size()) != rows.size())
    throw std::runtime_error("model_from_json: inconsistent expansion arrays");
  return m;
}

inline void save_model(const TrainedModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << model_to_json(model).dump(2) << "\n";
  if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_model: " + path + ": " + e.what());
  }
  return model_from_json(j);
}

// Audit report for one defense run: per-class kernel width, KL score,
// tanh fit parameters, and mode.
inline nlohmann::json profile_to_json(const KLidProfile& profile) {
  auto one = [](const ClassWeighting& cw) {
    return nlohmann::json{{"class_label", cw.class_label},
                          {"gamma_star", cw.gamma_star},
                          {"kl", cw.kl},
                          {"weight_a", cw.weight_fn.a},
                          {"weight_b", cw.weight_fn.b},
                          {"kde_bandwidth_benign", cw.benign_density.bandwidth},
                          {"kde_bandwidth_attacked", cw.attacked_density.bandwidth},
                          {"no_signal_fallback", cw.no_signal_fallback},
                          {"n_records", cw.records.size()}};
  };
  return nlohmann::json{{"mode", to_string(profile.mode)},
                        {"positive", one(profile.positive)},
                        {"negative", one(profile.negative)}};
}

}  // namespace klid
