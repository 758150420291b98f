#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dsm/core/canonical_json.hpp"
#include "dsm/core/error.hpp"
#include "dsm/measurement/quantity.hpp"
#include "dsm/measurement/topic.hpp"

namespace dsm {

/// The three smart-transducer configurations: forward raw samples, send
/// on-node features, or send a decimated stream plus features.
enum class ProcessingMode : int { raw = 1, features = 2, hybrid = 3 };

inline bool is_valid_mode(int m) noexcept { return m >= 1 && m <= 3; }

using FeatureMap = std::map<std::string, double>;

struct RawPayload {
  std::vector<double> samples;
  bool operator==(const RawPayload &) const = default;
};

struct FeaturePayload {
  FeatureMap features;
  bool operator==(const FeaturePayload &) const = default;
};

struct HybridPayload {
  std::vector<double> decimated;
  FeatureMap features;
  bool operator==(const HybridPayload &) const = default;
};

using Payload = std::variant<RawPayload, FeaturePayload, HybridPayload>;

inline ProcessingMode mode_of(const Payload &p) noexcept {
  return static_cast<ProcessingMode>(p.index() + 1);
}

/// Number of numeric values the payload carries.
inline std::size_t value_count(const Payload &p) {
  return std::visit(
      [](const auto &v) -> std::size_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, RawPayload>)
          return v.samples.size();
        else if constexpr (std::is_same_v<T, FeaturePayload>)
          return v.features.size();
        else
          return v.decimated.size() + v.features.size();
      },
      p);
}

struct MeasurementMessage {
  std::string node_id;
  std::string channel;
  std::uint64_t seq = 0;
  std::int64_t t_acq_us = 0; // sync-corrected, microseconds since Unix epoch
  ProcessingMode mode = ProcessingMode::raw;
  std::string unit;
  double fs_hz = 0.0;
  std::uint64_t window_len = 0;
  Payload payload;

  bool operator==(const MeasurementMessage &) const = default;
};

namespace detail {

inline bool is_feature_name(std::string_view s) noexcept {
  if (s.empty() || s.size() > 64)
    return false;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    if (!ok)
      return false;
  }
  return true;
}

inline void check_features(const FeatureMap &f) {
  if (f.empty())
    throw Error(Errc::invariant_violation, "payload", "empty feature map");
  for (const auto &[k, v] : f) {
    if (!is_feature_name(k))
      throw Error(Errc::invariant_violation, "payload",
                  "bad feature name '" + k + "'");
    if (!std::isfinite(v))
      throw Error(Errc::invariant_violation, "payload",
                  "non-finite feature " + k);
  }
}

inline void check_samples(const std::vector<double> &s) {
  for (double v : s)
    if (!std::isfinite(v))
      throw Error(Errc::invariant_violation, "payload", "non-finite sample");
}

} // namespace detail

/// Throws Error(InvariantViolation, field) on the first broken invariant.
inline void validate_message(const MeasurementMessage &m) {
  using detail::check_features;
  using detail::check_samples;
  if (!is_token(m.node_id))
    throw Error(Errc::invariant_violation, "node_id", m.node_id);
  if (!is_token(m.channel))
    throw Error(Errc::invariant_violation, "channel", m.channel);
  if (m.t_acq_us <= 0)
    throw Error(Errc::invariant_violation, "t_acq_us", "must be > 0");
  if (!is_valid_mode(static_cast<int>(m.mode)))
    throw Error(Errc::invariant_violation, "mode", "must be 1, 2 or 3");
  if (mode_of(m.payload) != m.mode)
    throw Error(Errc::invariant_violation, "mode",
                "payload shape disagrees with mode");
  if (!kind_from_unit(m.unit))
    throw Error(Errc::invariant_violation, "unit",
                "not a canonical unit: " + m.unit);
  if (!(m.fs_hz > 0.0) || !std::isfinite(m.fs_hz))
    throw Error(Errc::invariant_violation, "fs_hz", "must be > 0");
  if (m.window_len < 1)
    throw Error(Errc::invariant_violation, "window_len", "must be >= 1");

  std::visit(
      [&](const auto &p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RawPayload>) {
          if (p.samples.size() != m.window_len)
            throw Error(Errc::invariant_violation, "window_len",
                        "raw payload carries " +
                            std::to_string(p.samples.size()) + " samples");
          check_samples(p.samples);
        } else if constexpr (std::is_same_v<T, FeaturePayload>) {
          check_features(p.features);
        } else {
          if (p.decimated.empty() || m.window_len % p.decimated.size() != 0)
            throw Error(Errc::invariant_violation, "window_len",
                        "decimated length must divide window_len");
          check_samples(p.decimated);
          check_features(p.features);
        }
      },
      m.payload);
}

/// Canonical bytes. Key order: node_id, channel, seq, t_acq_us, mode, unit,
/// fs_hz, window_len, payload. Inside payload: raw then features.
inline std::string encode_message(const MeasurementMessage &m) {
  validate_message(m);
  using namespace cjson;
  std::string out;
  out.reserve(160 + value_count(m.payload) * 20);
  out += '{';
  append_key(out, "node_id");
  append_string(out, m.node_id);
  out += ',';
  append_key(out, "channel");
  append_string(out, m.channel);
  out += ',';
  append_key(out, "seq");
  append_number(out, m.seq);
  out += ',';
  append_key(out, "t_acq_us");
  append_number(out, static_cast<std::int64_t>(m.t_acq_us));
  out += ',';
  append_key(out, "mode");
  append_number(out, static_cast<std::int64_t>(m.mode));
  out += ',';
  append_key(out, "unit");
  append_string(out, m.unit);
  out += ',';
  append_key(out, "fs_hz");
  append_number(out, m.fs_hz);
  out += ',';
  append_key(out, "window_len");
  append_number(out, m.window_len);
  out += ',';
  append_key(out, "payload");
  out += '{';
  std::visit(
      [&](const auto &p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RawPayload>) {
          append_key(out, "raw");
          append_array(out, p.samples);
        } else if constexpr (std::is_same_v<T, FeaturePayload>) {
          append_key(out, "features");
          append_object(out, p.features);
        } else {
          append_key(out, "raw");
          append_array(out, p.decimated);
          out += ',';
          append_key(out, "features");
          append_object(out, p.features);
        }
      },
      m.payload);
  out += "}}";
  return out;
}

namespace detail {

using json = nlohmann::json;

inline const json &require(const json &obj, const char *key,
                           const std::string &path) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw Error(Errc::schema_violation, path);
  return *it;
}

inline std::string get_string(const json &obj, const char *key) {
  const auto &v = require(obj, key, key);
  if (!v.is_string())
    throw Error(Errc::schema_violation, key, "expected string");
  return v.get<std::string>();
}

inline double get_double(const json &v, const std::string &path) {
  if (!v.is_number())
    throw Error(Errc::schema_violation, path, "expected number");
  return v.get<double>();
}

inline std::int64_t get_int(const json &obj, const char *key) {
  const auto &v = require(obj, key, key);
  if (!v.is_number_integer())
    throw Error(Errc::schema_violation, key, "expected integer");
  if (v.is_number_unsigned()) {
    auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(INT64_MAX))
      throw Error(Errc::schema_violation, key, "out of range");
    return static_cast<std::int64_t>(u);
  }
  return v.get<std::int64_t>();
}

inline std::uint64_t get_uint(const json &obj, const char *key) {
  const auto &v = require(obj, key, key);
  if (!v.is_number_integer())
    throw Error(Errc::schema_violation, key, "expected integer");
  if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)
    throw Error(Errc::schema_violation, key, "expected non-negative");
  return v.get<std::uint64_t>();
}

inline std::vector<double> get_array(const json &v, const std::string &path) {
  if (!v.is_array())
    throw Error(Errc::schema_violation, path, "expected array");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(get_double(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline FeatureMap get_features(const json &v, const std::string &path) {
  if (!v.is_object())
    throw Error(Errc::schema_violation, path, "expected object");
  FeatureMap out;
  for (const auto &[k, x] : v.items())
    out.emplace(k, get_double(x, path + "." + k));
  return out;
}

} // namespace detail

inline constexpr std::array<const char *, 9> message_keys{
    "node_id", "channel", "seq",        "t_acq_us", "mode",
    "unit",    "fs_hz",   "window_len", "payload"};

/// Strict decode: unknown keys are rejected, all invariants re-checked.
inline MeasurementMessage decode_message(std::string_view bytes) {
  using detail::json;
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error &e) {
    throw Error(Errc::malformed_document, "document", e.what());
  }
  if (!doc.is_object())
    throw Error(Errc::schema_violation, "document", "expected object");
  for (const auto &[k, v] : doc.items()) {
    bool known = false;
    for (auto *mk : message_keys)
      known = known || k == mk;
    if (!known)
      throw Error(Errc::schema_violation, k, "unknown key");
  }
  for (auto *mk : message_keys)
    detail::require(doc, mk, mk);

  MeasurementMessage m;
  m.node_id = detail::get_string(doc, "node_id");
  m.channel = detail::get_string(doc, "channel");
  m.seq = detail::get_uint(doc, "seq");
  m.t_acq_us = detail::get_int(doc, "t_acq_us");
  auto mode = detail::get_int(doc, "mode");
  if (!is_valid_mode(static_cast<int>(mode)) || mode != static_cast<int>(mode))
    throw Error(Errc::schema_violation, "mode", "must be 1, 2 or 3");
  m.mode = static_cast<ProcessingMode>(mode);
  m.unit = detail::get_string(doc, "unit");
  m.fs_hz = detail::get_double(doc["fs_hz"], "fs_hz");
  m.window_len = detail::get_uint(doc, "window_len");

  const auto &p = doc["payload"];
  if (!p.is_object())
    throw Error(Errc::schema_violation, "payload", "expected object");
  for (const auto &[k, v] : p.items())
    if (k != "raw" && k != "features")
      throw Error(Errc::schema_violation, "payload." + k, "unknown key");
  bool has_raw = p.contains("raw");
  bool has_features = p.contains("features");
  if (has_raw && has_features) {
    m.payload = HybridPayload{detail::get_array(p["raw"], "payload.raw"),
                              detail::get_features(p["features"],
                                                   "payload.features")};
  } else if (has_raw) {
    m.payload = RawPayload{detail::get_array(p["raw"], "payload.raw")};
  } else if (has_features) {
    m.payload = FeaturePayload{
        detail::get_features(p["features"], "payload.features")};
  } else {
    throw Error(Errc::schema_violation, "payload", "empty payload");
  }
  validate_message(m);
  return m;
}

/// Tracks per-(node, channel) sequence numbers of an observed stream.
class SeqMonitor {
public:
  enum class Verdict { first, in_order, gap, regression };

  Verdict observe(const MeasurementMessage &m) {
    auto key = std::make_pair(m.node_id, m.channel);
    auto it = last_.find(key);
    if (it == last_.end()) {
      last_.emplace(key, m.seq);
      return Verdict::first;
    }
    auto prev = it->second;
    if (m.seq <= prev) {
      ++regressions_;
      return Verdict::regression;
    }
    it->second = m.seq;
    if (m.seq != prev + 1) {
      gaps_ += m.seq - prev - 1;
      return Verdict::gap;
    }
    return Verdict::in_order;
  }

  std::uint64_t missing() const noexcept { return gaps_; }
  std::uint64_t regressions() const noexcept { return regressions_; }

private:
  std::map<std::pair<std::string, std::string>, std::uint64_t> last_;
  std::uint64_t gaps_ = 0;
  std::uint64_t regressions_ = 0;
};

} // namespace dsm
