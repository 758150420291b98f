#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/measurement/message.hpp"

namespace dsm::wires {

/// Record types flowing on edges. `any` unifies with everything; a scored
/// record is still a features record.
enum class RecordType { samples, features, scored, any };

inline std::string_view to_string(RecordType t) {
  switch (t) {
  case RecordType::samples: return "samples";
  case RecordType::features: return "features";
  case RecordType::scored: return "scored";
  case RecordType::any: return "any";
  }
  return "any";
}

inline std::optional<RecordType> record_type_from(std::string_view s) {
  for (auto t : {RecordType::samples, RecordType::features, RecordType::scored, RecordType::any})
    if (to_string(t) == s)
      return t;
  return std::nullopt;
}

/// Can an output of type `out` feed an input expecting `in`?
inline bool compatible(RecordType out, RecordType in) {
  return in == RecordType::any || out == RecordType::any || out == in ||
         (out == RecordType::scored && in == RecordType::features);
}

struct WireRecord {
  std::int64_t t_us = 0;
  std::string node_id;
  std::string channel;
  std::map<std::string, double> values;
  std::map<std::string, std::string> tags;
  std::vector<double> samples; // raw or decimated stream, if the record carries one
  double fs_hz = 0;            // rate of `samples`

  // Accounting, not part of the emitted form.
  std::uint64_t id = 0;      // unique per created record, for edge tracing
  std::uint64_t lineage = 1; // consumed inputs this record stands for
};

inline std::uint64_t next_record_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

/// Emitted JSON form; keys sorted, so the text is deterministic.
inline nlohmann::json record_json(const WireRecord &r) {
  nlohmann::json j{{"t_us", r.t_us}, {"node_id", r.node_id}, {"channel", r.channel}, {"values", r.values}};
  if (!r.tags.empty())
    j["tags"] = r.tags;
  if (!r.samples.empty()) {
    j["samples"] = r.samples;
    j["fs_hz"] = r.fs_hz;
  }
  return j;
}

inline WireRecord record_from_json(const nlohmann::json &j) {
  WireRecord r;
  r.t_us = j.at("t_us").get<std::int64_t>();
  r.node_id = j.value("node_id", "");
  r.channel = j.value("channel", "");
  r.values = j.value("values", std::map<std::string, double>{});
  r.tags = j.value("tags", std::map<std::string, std::string>{});
  r.samples = j.value("samples", std::vector<double>{});
  r.fs_hz = j.value("fs_hz", 0.0);
  r.id = next_record_id();
  return r;
}

/// Mode 1 gives a samples record, mode 2 a features record, mode 3 a
/// features record that also carries the decimated stream.
inline WireRecord record_from_message(const MeasurementMessage &m) {
  WireRecord r;
  r.t_us = m.t_acq_us;
  r.node_id = m.node_id;
  r.channel = m.channel;
  r.tags["mode"] = std::to_string(static_cast<int>(m.mode));
  r.tags["seq"] = std::to_string(m.seq);
  if (auto *raw = std::get_if<RawPayload>(&m.payload)) {
    r.samples = raw->samples;
    r.fs_hz = m.fs_hz;
  } else if (auto *f = std::get_if<FeaturePayload>(&m.payload)) {
    r.values = f->features;
  } else if (auto *h = std::get_if<HybridPayload>(&m.payload)) {
    r.values = h->features;
    r.samples = h->decimated;
    r.fs_hz = m.window_len ? m.fs_hz * static_cast<double>(h->decimated.size()) / static_cast<double>(m.window_len)
                           : 0.0;
  }
  r.id = next_record_id();
  return r;
}

inline RecordType type_of(const WireRecord &r) {
  if (r.values.count("risk"))
    return RecordType::scored;
  if (!r.values.empty())
    return RecordType::features;
  return RecordType::samples;
}

} // namespace dsm::wires
