#pragma once

// Random generators shared by the property tests and the acceptance suite.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsm/measurement/message.hpp"

namespace dsm::testing {

inline std::string random_token(std::mt19937_64 &rng, std::size_t max_len = 32) {
  static constexpr char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789_-";
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, sizeof(alphabet) - 2);
  std::string s(len(rng), 'a');
  for (auto &c : s)
    c = alphabet[pick(rng)];
  return s;
}

inline std::string random_feature_name(std::mt19937_64 &rng) {
  static constexpr char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789_";
  std::uniform_int_distribution<std::size_t> len(1, 12);
  std::uniform_int_distribution<std::size_t> pick(0, sizeof(alphabet) - 2);
  std::string s(len(rng), 'a');
  for (auto &c : s)
    c = alphabet[pick(rng)];
  return s;
}

/// Finite doubles across many magnitudes, including awkward ones.
inline double random_value(std::mt19937_64 &rng) {
  std::uniform_int_distribution<int> kind(0, 9);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  switch (kind(rng)) {
  case 0: return 0.0;
  case 1: return -0.0;
  case 2: return std::ldexp(unit(rng), std::uniform_int_distribution<int>(-300, 300)(rng));
  case 3: return static_cast<double>(std::uniform_int_distribution<int>(-1000, 1000)(rng));
  case 4: return 0.1 * std::uniform_int_distribution<int>(-50, 50)(rng);
  default: return unit(rng) * 100.0;
  }
}

inline FeatureMap random_features(std::mt19937_64 &rng) {
  FeatureMap f;
  std::size_t n = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
  while (f.size() < n)
    f[random_feature_name(rng)] = random_value(rng);
  return f;
}

inline MeasurementMessage random_message(std::mt19937_64 &rng) {
  static const char *units[] = {"m/s²", "°C", "%RH", "hPa", "m/s", "rpm", "1"};
  MeasurementMessage m;
  m.node_id = random_token(rng);
  m.channel = random_token(rng);
  m.seq = std::uniform_int_distribution<std::uint64_t>()(rng);
  m.t_acq_us = std::uniform_int_distribution<std::int64_t>(1, INT64_MAX)(rng);
  m.unit = units[std::uniform_int_distribution<int>(0, 6)(rng)];
  m.fs_hz = std::uniform_real_distribution<double>(1e-3, 1e5)(rng);
  int mode = std::uniform_int_distribution<int>(1, 3)(rng);
  m.mode = static_cast<ProcessingMode>(mode);
  if (mode == 1) {
    std::size_t n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    RawPayload p;
    for (std::size_t i = 0; i < n; ++i)
      p.samples.push_back(random_value(rng));
    m.window_len = n;
    m.payload = p;
  } else if (mode == 2) {
    m.window_len = std::uniform_int_distribution<std::uint64_t>(1, 4096)(rng);
    m.payload = FeaturePayload{random_features(rng)};
  } else {
    std::size_t n = std::uniform_int_distribution<std::size_t>(1, 32)(rng);
    std::size_t f = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    HybridPayload p;
    for (std::size_t i = 0; i < n; ++i)
      p.decimated.push_back(random_value(rng));
    p.features = random_features(rng);
    m.window_len = n * f;
    m.payload = p;
  }
  return m;
}

/// Applies one structural mutation that makes a canonical document invalid.
inline std::string mutate_document(const std::string &doc, std::mt19937_64 &rng) {
  auto replace_first = [](std::string s, const std::string &from, const std::string &to) {
    auto pos = s.find(from);
    if (pos != std::string::npos)
      s.replace(pos, from.size(), to);
    return s;
  };
  auto key_value_span = [&](const std::string &key) -> std::pair<std::size_t, std::size_t> {
    auto pos = doc.find("\"" + key + "\":");
    auto start = pos + key.size() + 3;
    auto end = doc.find_first_of(",}", start);
    return {start, end};
  };
  switch (std::uniform_int_distribution<int>(0, 11)(rng)) {
  case 0: { // drop a required key
    static const char *keys[] = {"node_id", "channel", "seq", "t_acq_us", "mode",
                                 "unit", "fs_hz", "window_len"};
    std::string key = keys[std::uniform_int_distribution<int>(0, 7)(rng)];
    auto pos = doc.find("\"" + key + "\":");
    auto start = pos + key.size() + 3;
    auto end = doc[start] == '"' ? doc.find('"', start + 1) + 1 : doc.find(',', start);
    return doc.substr(0, pos) + doc.substr(end + 1);
  }
  case 1: return doc.substr(0, doc.size() - 1) + ",\"extra\":1}";
  case 2: return doc.substr(0, std::uniform_int_distribution<std::size_t>(0, doc.size() - 1)(rng));
  case 3: { auto [s, e] = key_value_span("mode"); return doc.substr(0, s) + "7" + doc.substr(e); }
  case 4: { auto [s, e] = key_value_span("t_acq_us"); return doc.substr(0, s) + "0" + doc.substr(e); }
  case 5: { auto [s, e] = key_value_span("fs_hz"); return doc.substr(0, s) + "-1" + doc.substr(e); }
  case 6: return replace_first(doc, "\"unit\":\"", "\"unit\":\"furlong");
  case 7: { auto [s, e] = key_value_span("seq"); return doc.substr(0, s) + "\"x\"" + doc.substr(e); }
  case 8: { // mode/payload disagreement
    auto [s, e] = key_value_span("mode");
    char cur = doc[s];
    char other = cur == '1' ? '2' : (cur == '2' ? '3' : '1');
    return doc.substr(0, s) + other + doc.substr(e);
  }
  case 9: return replace_first(doc, "\"node_id\":\"", "\"node_id\":\"UPPER");
  case 10: return replace_first(doc, "\"payload\":{", "\"payload\":{\"bogus\":[],");
  default: { auto [s, e] = key_value_span("window_len"); return doc.substr(0, s) + "0" + doc.substr(e); }
  }
}

} // namespace dsm::testing
