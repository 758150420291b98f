#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsm/core/canonical_json.hpp"
#include "dsm/core/config_reader.hpp"
#include "dsm/core/digest.hpp"
#include "dsm/dsp/adc.hpp"
#include "dsm/dsp/features.hpp"
#include "dsm/measurement/descriptor.hpp"
#include "dsm/node/clock.hpp"
#include "dsm/node/energy.hpp"

namespace dsm::node {

struct AdcChain {
  dsp::AdcSpec spec;
  dsp::Calibration cal;
};

struct NodeChannel {
  ChannelDescriptor descriptor;
  std::string signal; // name of the source signal sampled for this channel
  std::optional<dsp::Thresholds> events;
  std::optional<AdcChain> adc;
  std::optional<std::size_t> decimation; // overrides the node factor

  const std::string &name() const { return descriptor.topic.channel; }
};

enum class NodeKind { sensor, machine };

struct NodeConfig {
  std::string node_id;
  std::string site;
  NodeKind kind = NodeKind::sensor;
  std::vector<NodeChannel> channels;
  ProcessingMode mode = ProcessingMode::features;
  std::size_t decimation_factor = 8;
  std::string broker_host = "127.0.0.1";
  std::uint16_t broker_port = 1883;
  double sync_period_s = 10.0;
  ClockModel clock;
  EnergyModel energy;
  std::size_t buffer_capacity = 1000;

  std::size_t decimation_for(const NodeChannel &c) const {
    return c.decimation.value_or(decimation_factor);
  }
};

/// Throws ConfigInvalid naming the first broken invariant.
inline void validate(const NodeConfig &c) {
  if (!is_token(c.node_id))
    throw Error(Errc::config_invalid, "node_id", c.node_id);
  if (!is_token(c.site))
    throw Error(Errc::config_invalid, "site", c.site);
  if (c.channels.empty())
    throw Error(Errc::config_invalid, "channels", "at least one channel required");
  if (!(c.sync_period_s > 0))
    throw Error(Errc::config_invalid, "sync_period_s", "must be > 0");
  if (c.buffer_capacity == 0)
    throw Error(Errc::config_invalid, "buffer_capacity", "must be >= 1");
  try {
    c.clock.validate();
    c.energy.validate();
  } catch (const Error &e) {
    throw Error(Errc::config_invalid, e.subject(), e.detail());
  }
  for (const auto &ch : c.channels) {
    auto v = validate_descriptor(ch.descriptor);
    if (!v.empty())
      throw Error(Errc::config_invalid, "channels." + ch.name(), std::string(to_string(v.front())));
    if (ch.descriptor.topic.node_id != c.node_id || ch.descriptor.topic.site != c.site)
      throw Error(Errc::config_invalid, "channels." + ch.name(), "topic does not belong to node");
    if (c.kind == NodeKind::sensor && ch.descriptor.window < 2)
      throw Error(Errc::config_invalid, "channels." + ch.name() + ".window", "sensor windows need >= 2 samples");
    std::size_t f = c.decimation_for(ch);
    if (f < 1 || ch.descriptor.window % f != 0)
      throw Error(Errc::config_invalid, "channels." + ch.name() + ".decimation",
                  "decimation factor must divide the window");
    if (ch.events && (ch.events->rising < ch.events->falling))
      throw Error(Errc::config_invalid, "channels." + ch.name() + ".events", "rising < falling");
    if (ch.adc) {
      try {
        dsp::validate(ch.adc->spec);
        dsp::validate(ch.adc->cal);
      } catch (const Error &e) {
        throw Error(Errc::config_invalid, "channels." + ch.name() + ".adc." + e.subject(), e.detail());
      }
    }
  }
}

inline NodeConfig node_config_from_json(const json &doc, const std::string &path = "node") {
  ConfigReader r(doc, path);
  NodeConfig c;
  c.node_id = r.string("node_id");
  c.site = r.string("site");
  auto kind = r.string("kind", "sensor");
  if (kind == "sensor")
    c.kind = NodeKind::sensor;
  else if (kind == "machine")
    c.kind = NodeKind::machine;
  else
    throw Error(Errc::config_invalid, r.at("kind"), kind);
  auto mode = r.integer("mode", 2);
  if (!is_valid_mode(static_cast<int>(mode)))
    throw Error(Errc::config_invalid, r.at("mode"), std::to_string(mode));
  c.mode = static_cast<ProcessingMode>(mode);
  c.decimation_factor = r.count("decimation_factor", 8);
  c.sync_period_s = r.number("sync_period_s", 10.0);
  c.buffer_capacity = r.count("buffer_capacity", 1000);
  if (r.has("broker")) {
    auto b = r.object("broker");
    c.broker_host = b.string("host", "127.0.0.1");
    c.broker_port = static_cast<std::uint16_t>(b.count("port", 1883));
    b.finish();
  }
  if (r.has("clock")) {
    auto k = r.object("clock");
    c.clock.true_offset_us = k.integer("true_offset_us", 0);
    c.clock.drift_ppm = k.number("drift_ppm", 0.0);
    k.finish();
  }
  if (r.has("energy")) {
    auto e = r.object("energy");
    c.energy.cost_per_sample_cpu = e.number("cost_per_sample_cpu", 1.0);
    c.energy.cost_per_feature_cpu = e.number("cost_per_feature_cpu", 50.0);
    c.energy.cost_per_byte_radio = e.number("cost_per_byte_radio", 2.0);
    c.energy.budget = e.number("budget", 1e9);
    e.finish();
  }
  const auto &chans = r.array("channels");
  for (std::size_t i = 0; i < chans.size(); ++i) {
    ConfigReader cr(chans[i], r.at("channels[" + std::to_string(i) + "]"));
    NodeChannel ch;
    auto name = cr.string("channel");
    try {
      ch.descriptor.topic = build_topic(c.site, c.node_id, name, TopicKind::features);
    } catch (const Error &e) {
      throw Error(Errc::config_invalid, cr.at("channel"), e.what());
    }
    ch.signal = cr.string("signal", name);
    auto q = kind_from_name(cr.string("quantity"));
    if (!q)
      throw Error(Errc::config_invalid, cr.at("quantity"), "unknown quantity");
    ch.descriptor.quantity.kind = *q;
    auto range = cr.numbers("range");
    if (range.size() != 2)
      throw Error(Errc::config_invalid, cr.at("range"), "expected [min, max]");
    ch.descriptor.range_min = range[0];
    ch.descriptor.range_max = range[1];
    ch.descriptor.fs_hz = cr.number("fs_hz");
    ch.descriptor.window = static_cast<std::uint32_t>(cr.count("window"));
    ch.descriptor.mode = c.mode;
    ch.descriptor.sensor_model = cr.string("sensor_model", "");
    ch.descriptor.location = cr.string("location", "");
    if (cr.has("decimation"))
      ch.decimation = cr.count("decimation");
    if (cr.has("events")) {
      auto e = cr.object("events");
      ch.events = dsp::Thresholds{e.number("rising"), e.number("falling")};
      e.finish();
    }
    if (cr.has("adc")) {
      auto a = cr.object("adc");
      AdcChain adc;
      adc.spec.bits = static_cast<int>(a.integer("bits", 12));
      adc.spec.v_min = a.number("v_min");
      adc.spec.v_max = a.number("v_max");
      adc.cal.gain = a.number("gain");
      adc.cal.offset = a.number("offset", 0.0);
      a.finish();
      ch.adc = adc;
    }
    cr.finish();
    c.channels.push_back(std::move(ch));
  }
  r.finish();
  validate(c);
  return c;
}

/// Canonical text of the reconfigurable state, used for the ping digest.
inline std::string config_digest(const NodeConfig &c) {
  std::string s = "{";
  cjson::append_key(s, "mode");
  cjson::append_number(s, static_cast<std::int64_t>(c.mode));
  s += ",";
  cjson::append_key(s, "channels");
  s += "[";
  for (std::size_t i = 0; i < c.channels.size(); ++i) {
    if (i)
      s += ",";
    const auto &ch = c.channels[i];
    s += "{";
    cjson::append_key(s, "channel");
    cjson::append_string(s, ch.name());
    s += ",";
    cjson::append_key(s, "fs_hz");
    cjson::append_number(s, ch.descriptor.fs_hz);
    s += ",";
    cjson::append_key(s, "window");
    cjson::append_number(s, static_cast<std::uint64_t>(ch.descriptor.window));
    s += ",";
    cjson::append_key(s, "decimation");
    cjson::append_number(s, static_cast<std::uint64_t>(c.decimation_for(ch)));
    s += "}";
  }
  s += "]}";
  return sha256_hex(s).substr(0, 16);
}

} // namespace dsm::node
