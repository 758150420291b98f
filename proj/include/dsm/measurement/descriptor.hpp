#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/core/error.hpp"
#include "dsm/measurement/message.hpp"
#include "dsm/measurement/quantity.hpp"
#include "dsm/measurement/topic.hpp"

namespace dsm {

/// TEDS-like channel metadata registered per topic.
struct ChannelDescriptor {
  TopicPath topic;
  Quantity quantity;
  double range_min = 0.0;
  double range_max = 1.0;
  double fs_hz = 1.0;
  std::uint32_t window = 1;
  ProcessingMode mode = ProcessingMode::features;
  std::string sensor_model;
  std::string location;

  const std::string &channel() const noexcept { return topic.channel; }

  /// Publish period in microseconds (window / fs).
  double period_us() const noexcept { return window * 1e6 / fs_hz; }
};

enum class DescriptorViolation {
  range_empty,
  window_zero,
  rate_invalid,
  period_not_integral,
  topic_kind_invalid,
};

constexpr std::string_view to_string(DescriptorViolation v) noexcept {
  switch (v) {
  case DescriptorViolation::range_empty: return "RangeEmpty";
  case DescriptorViolation::window_zero: return "WindowZero";
  case DescriptorViolation::rate_invalid: return "RateInvalid";
  case DescriptorViolation::period_not_integral: return "PeriodNotIntegral";
  case DescriptorViolation::topic_kind_invalid: return "TopicKindInvalid";
  }
  return "Unknown";
}

/// Returns every violated invariant; empty means valid.
inline std::vector<DescriptorViolation>
validate_descriptor(const ChannelDescriptor &d) {
  std::vector<DescriptorViolation> out;
  if (!(d.range_min < d.range_max))
    out.push_back(DescriptorViolation::range_empty);
  if (d.window == 0)
    out.push_back(DescriptorViolation::window_zero);
  bool rate_ok = d.fs_hz > 0.0 && std::isfinite(d.fs_hz);
  if (!rate_ok)
    out.push_back(DescriptorViolation::rate_invalid);
  if (rate_ok && d.window > 0) {
    double period = d.period_us();
    if (std::abs(period - std::round(period)) > 1e-6)
      out.push_back(DescriptorViolation::period_not_integral);
  }
  if (d.topic.kind != TopicKind::raw && d.topic.kind != TopicKind::features)
    out.push_back(DescriptorViolation::topic_kind_invalid);
  return out;
}

inline nlohmann::json descriptor_to_json(const ChannelDescriptor &d) {
  return nlohmann::json{
      {"topic", render(d.topic)},
      {"quantity", std::string(kind_name(d.quantity.kind))},
      {"unit", std::string(d.quantity.unit())},
      {"range", {d.range_min, d.range_max}},
      {"fs_hz", d.fs_hz},
      {"window", d.window},
      {"mode", static_cast<int>(d.mode)},
      {"sensor_model", d.sensor_model},
      {"location", d.location},
  };
}

inline ChannelDescriptor descriptor_from_json(const nlohmann::json &j) {
  try {
    ChannelDescriptor d;
    d.topic = parse_topic(j.at("topic").get<std::string>());
    auto kind = kind_from_name(j.at("quantity").get<std::string>());
    if (!kind)
      throw Error(Errc::config_invalid, "quantity",
                  j.at("quantity").get<std::string>());
    d.quantity.kind = *kind;
    if (j.contains("unit") && j["unit"].get<std::string>() != d.quantity.unit())
      throw Error(Errc::config_invalid, "unit",
                  "unit does not match quantity");
    d.range_min = j.at("range").at(0).get<double>();
    d.range_max = j.at("range").at(1).get<double>();
    d.fs_hz = j.at("fs_hz").get<double>();
    d.window = j.at("window").get<std::uint32_t>();
    int mode = j.value("mode", 2);
    if (!is_valid_mode(mode))
      throw Error(Errc::config_invalid, "mode", std::to_string(mode));
    d.mode = static_cast<ProcessingMode>(mode);
    d.sensor_model = j.value("sensor_model", "");
    d.location = j.value("location", "");
    return d;
  } catch (const nlohmann::json::exception &e) {
    throw Error(Errc::config_invalid, "descriptor", e.what());
  }
}

/// Registry of channel descriptors keyed by (site, node, channel).
class DescriptorRegistry {
public:
  /// Registers a descriptor; returns the violations that blocked it.
  std::vector<DescriptorViolation> add(const ChannelDescriptor &d) {
    auto v = validate_descriptor(d);
    if (v.empty())
      entries_[key(d.topic)] = d;
    return v;
  }

  const ChannelDescriptor *find(const TopicPath &t) const {
    auto it = entries_.find(key(t));
    return it == entries_.end() ? nullptr : &it->second;
  }

  /// Checks that a message is consistent with its registered descriptor.
  bool conforms(const std::string &site, const MeasurementMessage &m) const {
    auto it = entries_.find(site + "/" + m.node_id + "/" + m.channel);
    if (it == entries_.end())
      return false;
    return it->second.quantity.unit() == m.unit &&
           it->second.fs_hz == m.fs_hz;
  }

  std::size_t size() const noexcept { return entries_.size(); }

private:
  static std::string key(const TopicPath &t) {
    return t.site + "/" + t.node_id + "/" + t.channel;
  }
  std::map<std::string, ChannelDescriptor> entries_;
};

} // namespace dsm
