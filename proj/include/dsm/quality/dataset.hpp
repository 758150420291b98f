#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/core/canonical_json.hpp"
#include "dsm/core/error.hpp"
#include "dsm/quality/model.hpp"

namespace dsm::quality {

struct SessionRecord {
  FeatureValues features;
  std::optional<int> label;
  std::string session_id;
  std::int64_t t_us = 0;

  bool operator==(const SessionRecord &) const = default;
};

/// One NDJSON line; key order session_id, t_us, label, features.
inline std::string record_line(const SessionRecord &r) {
  std::string out = "{\"session_id\":";
  cjson::append_string(out, r.session_id);
  out += ",\"t_us\":" + std::to_string(r.t_us);
  if (r.label)
    out += ",\"label\":" + std::to_string(*r.label);
  out += ",\"features\":";
  cjson::append_object(out, r.features);
  out += '}';
  return out;
}

inline SessionRecord record_from_line(const std::string &line) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw Error(Errc::malformed_document, "dataset", "not a JSON object");
  SessionRecord r;
  try {
    r.session_id = j.at("session_id").get<std::string>();
    r.t_us = j.at("t_us").get<std::int64_t>();
    if (j.contains("label")) {
      int l = j["label"].get<int>();
      if (l != 0 && l != 1)
        throw Error(Errc::schema_violation, "label", "must be 0 or 1");
      r.label = l;
    }
    for (const auto &[k, v] : j.at("features").items())
      r.features[k] = v.get<double>();
  } catch (const nlohmann::json::exception &e) {
    throw Error(Errc::schema_violation, "dataset", e.what());
  }
  return r;
}

inline std::vector<SessionRecord> read_dataset(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error(Errc::io_error, path, "cannot open dataset");
  std::vector<SessionRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty())
      out.push_back(record_from_line(line));
  return out;
}

inline void write_dataset(const std::vector<SessionRecord> &rows, const std::string &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(Errc::io_error, path, "cannot write dataset");
  for (const auto &r : rows)
    out << record_line(r) << '\n';
}

struct Dataset {
  std::vector<std::string> names;
  std::vector<std::vector<double>> X; // standardized rows
  std::vector<double> y;
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<std::string> dropped; // constant features
};

inline std::vector<double> raw_row(const SessionRecord &r, const std::vector<std::string> &names) {
  std::vector<double> row;
  row.reserve(names.size());
  for (const auto &n : names) {
    auto it = r.features.find(n);
    if (it == r.features.end())
      throw Error(Errc::missing_feature, n, "record " + r.session_id + "@" + std::to_string(r.t_us));
    row.push_back(it->second);
  }
  return row;
}

/// Standardizes the rows with statistics from these rows only. Constant
/// columns are dropped and reported.
inline Dataset build_dataset(const std::vector<SessionRecord> &rows, const std::vector<std::string> &names) {
  if (rows.size() < 20)
    throw Error(Errc::too_few_records, "dataset", std::to_string(rows.size()) + " records, need 20");
  bool pos = false, neg = false;
  for (const auto &r : rows) {
    if (!r.label)
      throw Error(Errc::schema_violation, "label", "unlabeled record in training data");
    (*r.label ? pos : neg) = true;
  }
  if (!pos || !neg)
    throw Error(Errc::single_class, "dataset", pos ? "no negative labels" : "no positive labels");

  std::vector<std::vector<double>> raw;
  raw.reserve(rows.size());
  for (const auto &r : rows)
    raw.push_back(raw_row(r, names));

  Dataset d;
  const double n = static_cast<double>(rows.size());
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < names.size(); ++c) {
    double mean = 0;
    for (const auto &row : raw)
      mean += row[c];
    mean /= n;
    double var = 0;
    for (const auto &row : raw)
      var += (row[c] - mean) * (row[c] - mean);
    double sd = std::sqrt(var / n);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      d.dropped.push_back(names[c]);
      continue;
    }
    keep.push_back(c);
    d.names.push_back(names[c]);
    d.mu.push_back(mean);
    d.sigma.push_back(sd);
  }
  if (keep.empty())
    throw Error(Errc::schema_violation, "dataset", "every feature is constant");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::vector<double> row;
    for (std::size_t k = 0; k < keep.size(); ++k)
      row.push_back((raw[i][keep[k]] - d.mu[k]) / d.sigma[k]);
    d.X.push_back(std::move(row));
    d.y.push_back(*rows[i].label);
  }
  return d;
}

/// Seeded 80/20 split by session id: returns the training session ids.
inline std::set<std::string> training_sessions(const std::vector<SessionRecord> &rows, std::uint64_t seed,
                                               double train_fraction = 0.8) {
  std::set<std::string> ids;
  for (const auto &r : rows)
    ids.insert(r.session_id);
  std::vector<std::string> v(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng() % i]);
  auto n = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(v.size())));
  if (v.size() >= 2)
    n = std::clamp<std::size_t>(n, 1, v.size() - 1);
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)};
}

} // namespace dsm::quality
