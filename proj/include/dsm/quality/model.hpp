#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/core/error.hpp"

namespace dsm::quality {

using FeatureValues = std::map<std::string, double>;

/// Stable logistic function.
inline double sigmoid(double z) {
  if (z >= 0)
    return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

struct QualityModel {
  std::string version;
  std::vector<std::string> feature_names;
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> w;
  double b = 0.0;
  double threshold = 0.7;
  std::vector<std::string> trained_on;
  std::string created_at;

  bool operator==(const QualityModel &) const = default;
};

/// Throws InvalidModelFile naming the first broken invariant.
inline void validate_model(const QualityModel &m) {
  auto bad = [](const std::string &why) { throw Error(Errc::invalid_model_file, "model", why); };
  const auto n = m.feature_names.size();
  if (n == 0)
    bad("no features");
  if (m.w.size() != n)
    bad("|w| != |feature_names|");
  if (m.mu.size() != n)
    bad("|mu| != |feature_names|");
  if (m.sigma.size() != n)
    bad("|sigma| != |feature_names|");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(m.sigma[i] > 0) || !std::isfinite(m.sigma[i]))
      bad("sigma of " + m.feature_names[i] + " must be > 0");
    if (!std::isfinite(m.mu[i]) || !std::isfinite(m.w[i]))
      bad("non-finite parameter for " + m.feature_names[i]);
  }
  if (!std::isfinite(m.b))
    bad("non-finite bias");
  if (!(m.threshold > 0 && m.threshold < 1))
    bad("threshold must lie in (0,1)");
  if (m.version.empty())
    bad("empty version");
}

/// Standardized linear margin.
inline double margin(const QualityModel &m, const FeatureValues &x) {
  double z = m.b;
  for (std::size_t i = 0; i < m.feature_names.size(); ++i) {
    auto it = x.find(m.feature_names[i]);
    if (it == x.end())
      throw Error(Errc::missing_feature, m.feature_names[i]);
    z += m.w[i] * (it->second - m.mu[i]) / m.sigma[i];
  }
  return z;
}

inline double predict_risk(const QualityModel &m, const FeatureValues &x) { return sigmoid(margin(m, x)); }

inline std::vector<double> predict_batch(const QualityModel &m, const std::vector<FeatureValues> &xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto &x : xs)
    out.push_back(predict_risk(m, x));
  return out;
}

inline nlohmann::ordered_json model_to_json(const QualityModel &m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["feature_names"] = m.feature_names;
  j["mu"] = m.mu;
  j["sigma"] = m.sigma;
  j["w"] = m.w;
  j["b"] = m.b;
  j["threshold"] = m.threshold;
  j["trained_on"] = m.trained_on;
  j["created_at"] = m.created_at;
  return j;
}

inline std::string model_text(const QualityModel &m) { return model_to_json(m).dump(2) + "\n"; }

inline QualityModel model_from_text(const std::string &text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw Error(Errc::invalid_model_file, "model", "not a JSON object");
  QualityModel m;
  try {
    m.version = j.at("version").get<std::string>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.mu = j.at("mu").get<std::vector<double>>();
    m.sigma = j.at("sigma").get<std::vector<double>>();
    m.w = j.at("w").get<std::vector<double>>();
    m.b = j.at("b").get<double>();
    m.threshold = j.at("threshold").get<double>();
    m.trained_on = j.value("trained_on", std::vector<std::string>{});
    m.created_at = j.value("created_at", std::string());
  } catch (const nlohmann::json::exception &e) {
    throw Error(Errc::invalid_model_file, "model", e.what());
  }
  validate_model(m);
  return m;
}

inline void save_model(const QualityModel &m, const std::string &path) {
  validate_model(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(Errc::io_error, path, "cannot write model");
  out << model_text(m);
}

inline QualityModel load_model(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(Errc::invalid_model_file, path, "cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_text(ss.str());
}

/// Holder for the active model; swaps are atomic with respect to get().
class ModelSlot {
public:
  ModelSlot() = default;
  explicit ModelSlot(QualityModel m) : model_(std::make_shared<const QualityModel>(std::move(m))) {}

  std::shared_ptr<const QualityModel> get() const {
    std::lock_guard lock(mu_);
    return model_;
  }

  void set(QualityModel m) {
    validate_model(m);
    auto p = std::make_shared<const QualityModel>(std::move(m));
    std::lock_guard lock(mu_);
    model_ = std::move(p);
  }

  /// Loads and swaps in a model file; on failure the current model stays.
  void reload(const std::string &path) { set(load_model(path)); }

private:
  mutable std::mutex mu_;
  std::shared_ptr<const QualityModel> model_;
};

} // namespace dsm::quality
