#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/broker/mqtt_codec.hpp"
#include "dsm/measurement/message.hpp"
#include "dsm/node/clock.hpp"
#include "dsm/node/config.hpp"
#include "dsm/node/energy.hpp"
#include "dsm/node/processing.hpp"
#include "dsm/node/source.hpp"
#include "dsm/node/transport.hpp"

namespace dsm::node {

using TimeFn = std::function<std::int64_t()>;

struct SentRecord {
  std::string topic;
  std::string payload;
  int qos = 0;
  std::size_t frame_bytes = 0;
};

struct NodeStats {
  std::uint64_t windows = 0;
  std::uint64_t published = 0;
  std::uint64_t dropped_oldest = 0;
  std::uint64_t acks = 0;
  std::uint64_t nacks = 0;
  std::uint64_t syncs = 0;
};

/// One smart transducer: samples its channels, processes each full window
/// per the active mode, stamps sync-corrected time and publishes through a
/// bounded store-and-forward buffer. Single-threaded apart from on_message,
/// which only queues.
class SensorNode {
public:
  SensorNode(NodeConfig cfg, Transport &transport, TimeFn now_true, SignalSource *source,
             MachinePort *machine = nullptr)
      : cfg_(std::move(cfg)), transport_(transport), now_true_(std::move(now_true)),
        source_(source), machine_(machine), clock_(cfg_.clock) {
    validate(cfg_);
    if (cfg_.kind == NodeKind::sensor && !source_)
      throw Error(Errc::config_invalid, cfg_.node_id, "sensor node needs a signal source");
    if (cfg_.kind == NodeKind::machine && !machine_)
      throw Error(Errc::config_invalid, cfg_.node_id, "machine node needs a machine port");
    energy_ = EnergyMeter(cfg_.energy);
    cmd_topic_ = render(node_topic(cfg_.site, cfg_.node_id, TopicKind::cmd));
    sync_topic_ = render(node_topic(cfg_.site, cfg_.node_id, TopicKind::sync));
    ack_topic_ = render(build_topic(cfg_.site, cfg_.node_id, std::string(node_channel), TopicKind::events));
    runs_.resize(cfg_.channels.size());
    transport_.set_handler([this](const std::string &t, const std::string &p) { on_message(t, p); });
  }

  SensorNode(const SensorNode &) = delete;
  SensorNode &operator=(const SensorNode &) = delete;

  /// Places the first window of every channel at t0 (reference time).
  void start(std::int64_t t0_true) {
    for (auto &r : runs_) {
      r.window_start = t0_true;
      r.k = 0;
      r.buf.clear();
    }
    next_sync_ = t0_true;
    if (clock_.epoch_us == 0)
      clock_.epoch_us = t0_true;
    started_ = true;
  }

  /// Handles queued commands, syncs if due, acquires every sample instant
  /// before t_end and flushes the buffer.
  void step(std::int64_t t_end_true) {
    if (!started_)
      throw Error(Errc::invariant_violation, cfg_.node_id, "step before start");
    ensure_connected();
    drain_inbox();
    maybe_sync();
    if (!exhausted_)
      acquire(t_end_true);
    flush();
  }

  /// Transport callback; safe from any thread.
  void on_message(const std::string &topic, const std::string &payload) {
    std::lock_guard lock(inbox_mu_);
    inbox_.push_back({topic, payload, now_true_()});
  }

  void set_observer(std::function<void(const SentRecord &)> f) { observer_ = std::move(f); }

  const NodeConfig &config() const { return cfg_; }
  const ClockModel &clock() const { return clock_; }
  const EnergyMeter &energy() const { return energy_; }
  const NodeStats &stats() const { return stats_; }
  std::optional<SyncEstimate> last_sync() const { return last_sync_; }
  std::size_t buffered() const { return buffer_.size(); }
  bool exhausted() const { return exhausted_; }
  const std::string &cmd_topic() const { return cmd_topic_; }
  const std::string &sync_topic() const { return sync_topic_; }
  const std::string &ack_topic() const { return ack_topic_; }

  /// Window geometry currently in force for a channel (after the last boundary).
  std::uint32_t active_window(std::size_t i) const { return runs_[i].window; }
  ProcessingMode active_mode(std::size_t i) const { return runs_[i].mode; }

private:
  struct Inbound {
    std::string topic;
    std::string payload;
    std::int64_t received_true;
  };
  struct Outgoing {
    std::string topic;
    std::string payload;
    int qos;
  };
  struct ChannelRun {
    double fs = 0;
    std::uint32_t window = 0;
    ProcessingMode mode = ProcessingMode::features;
    std::size_t decimation = 1;
    std::int64_t window_start = 0;
    std::uint32_t k = 0;
    std::vector<double> buf;
    std::uint64_t seq = 0;
  };

  void ensure_connected() {
    if (transport_.connected())
      return;
    if (!transport_.connect())
      return;
    if (!transport_.subscribe(cmd_topic_, 1) || !transport_.subscribe(sync_topic_, 0))
      return;
  }

  void drain_inbox() {
    std::vector<Inbound> items;
    {
      std::lock_guard lock(inbox_mu_);
      items.swap(inbox_);
    }
    for (auto &m : items) {
      if (m.topic == cmd_topic_)
        handle_command(m.payload);
      else if (m.topic == sync_topic_)
        handle_sync(m.payload, m.received_true);
    }
  }

  void maybe_sync() {
    if (!transport_.connected())
      return;
    const auto now = now_true_();
    if (now < next_sync_)
      return;
    next_sync_ = now + static_cast<std::int64_t>(std::llround(cfg_.sync_period_s * 1e6));
    pending_sync_id_ = cfg_.node_id + "-" + std::to_string(sync_counter_++);
    pending_t1_ = clock_.corrected_us(now);
    nlohmann::json req{{"type", "req"}, {"req_id", pending_sync_id_}, {"t1", pending_t1_}};
    send_now(sync_topic_, req.dump(), 0);
  }

  void handle_sync(const std::string &payload, std::int64_t received_true) {
    auto doc = nlohmann::json::parse(payload, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || doc.value("type", "") != "resp")
      return;
    if (doc.value("req_id", "") != pending_sync_id_ || pending_sync_id_.empty())
      return;
    try {
      auto t1 = doc.at("t1").get<std::int64_t>();
      if (t1 != pending_t1_)
        return;
      auto t4 = clock_.corrected_us(received_true);
      auto est = sync_exchange(t1, doc.at("t2").get<std::int64_t>(), doc.at("t3").get<std::int64_t>(), t4);
      apply_sync(clock_, est);
      last_sync_ = est;
      ++stats_.syncs;
    } catch (const std::exception &) {
      // a malformed or non-causal answer leaves the clock alone
    }
    pending_sync_id_.clear();
  }

  void handle_command(const std::string &payload) {
    auto doc = nlohmann::json::parse(payload, nullptr, false);
    std::string req_id;
    if (!doc.is_discarded() && doc.is_object() && doc.contains("req_id") && doc["req_id"].is_string())
      req_id = doc["req_id"].get<std::string>();
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("cmd") || !doc["cmd"].is_string()) {
      ack(req_id, "", false, "MalformedDocument(cmd)", {});
      return;
    }
    const auto cmd = doc["cmd"].get<std::string>();
    nlohmann::json args = doc.value("args", nlohmann::json::object());
    if (!args.is_object()) {
      ack(req_id, cmd, false, "MalformedDocument(args)", {});
      return;
    }
    nlohmann::json extra = nlohmann::json::object();
    try {
      if (cmd == "ping") {
        extra["node_id"] = cfg_.node_id;
        extra["config_digest"] = config_digest(cfg_);
        extra["mode"] = static_cast<int>(cfg_.mode);
      } else if (cmd == "set_mode") {
        set_mode(args);
      } else if (cmd == "set_window") {
        set_window(args);
      } else if (cmd == "set_rate") {
        set_rate(args);
      } else if (cmd == "set_params" && machine_) {
        auto outcome = machine_->set_params(args, doc.value("origin", std::string("operator")));
        if (!outcome.ok)
          throw Error(Errc::out_of_bounds, "params", outcome.reason);
      } else {
        throw Error(Errc::unknown_command, cmd);
      }
    } catch (const Error &e) {
      ack(req_id, cmd, false, e.what(), {});
      return;
    }
    ack(req_id, cmd, true, "", extra);
  }

  std::vector<std::size_t> targets(const nlohmann::json &args) const {
    std::vector<std::size_t> out;
    if (args.contains("channel")) {
      if (!args["channel"].is_string())
        throw Error(Errc::invalid_value, "channel", "expected a string");
      auto name = args["channel"].get<std::string>();
      for (std::size_t i = 0; i < cfg_.channels.size(); ++i)
        if (cfg_.channels[i].name() == name)
          out.push_back(i);
      if (out.empty())
        throw Error(Errc::invalid_value, "channel", "unknown channel " + name);
    } else {
      for (std::size_t i = 0; i < cfg_.channels.size(); ++i)
        out.push_back(i);
    }
    return out;
  }

  void require_sensor(const std::string &cmd) const {
    if (cfg_.kind != NodeKind::sensor)
      throw Error(Errc::unknown_command, cmd, "not supported by machine nodes");
  }

  void set_mode(const nlohmann::json &args) {
    require_sensor("set_mode");
    if (!args.contains("mode") || !args["mode"].is_number_integer() ||
        !is_valid_mode(args["mode"].get<int>()))
      throw Error(Errc::invalid_value, "mode", "expected 1, 2 or 3");
    auto next = cfg_;
    next.mode = static_cast<ProcessingMode>(args["mode"].get<int>());
    for (auto &c : next.channels)
      c.descriptor.mode = next.mode;
    commit(next);
  }

  void set_window(const nlohmann::json &args) {
    require_sensor("set_window");
    if (!args.contains("window") || !args["window"].is_number_integer() || args["window"].get<std::int64_t>() < 2)
      throw Error(Errc::invalid_value, "window", "expected an integer >= 2");
    auto next = cfg_;
    for (auto i : targets(args))
      next.channels[i].descriptor.window = args["window"].get<std::uint32_t>();
    commit(next);
  }

  void set_rate(const nlohmann::json &args) {
    require_sensor("set_rate");
    if (!args.contains("fs_hz") || !args["fs_hz"].is_number() || !(args["fs_hz"].get<double>() > 0))
      throw Error(Errc::invalid_value, "fs_hz", "expected a number > 0");
    auto next = cfg_;
    for (auto i : targets(args))
      next.channels[i].descriptor.fs_hz = args["fs_hz"].get<double>();
    commit(next);
  }

  /// Validates the candidate configuration in full; it takes effect per
  /// channel at that channel's next window boundary.
  void commit(const NodeConfig &next) {
    try {
      validate(next);
    } catch (const Error &e) {
      throw Error(Errc::invalid_value, e.subject(), e.detail());
    }
    cfg_ = next;
  }

  void ack(const std::string &req_id, const std::string &cmd, bool ok, const std::string &reason,
           const nlohmann::json &extra) {
    nlohmann::json a = extra.is_object() ? extra : nlohmann::json::object();
    a["req_id"] = req_id;
    a["ok"] = ok;
    a["cmd"] = cmd;
    a["node_id"] = cfg_.node_id;
    if (!ok)
      a["reason"] = reason;
    ok ? ++stats_.acks : ++stats_.nacks;
    enqueue({ack_topic_, a.dump(), 1});
  }

  void adopt(std::size_t i) {
    auto &r = runs_[i];
    const auto &ch = cfg_.channels[i];
    r.fs = ch.descriptor.fs_hz;
    r.window = ch.descriptor.window;
    r.mode = cfg_.kind == NodeKind::machine ? ProcessingMode::features : cfg_.mode;
    r.decimation = cfg_.decimation_for(ch);
    r.buf.clear();
    r.buf.reserve(r.window);
  }

  std::int64_t offset_us(const ChannelRun &r, std::uint64_t k) const {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(k) * 1e6 / r.fs));
  }

  void acquire(std::int64_t t_end) {
    for (std::size_t i = 0; i < runs_.size(); ++i) {
      auto &r = runs_[i];
      const auto &ch = cfg_.channels[i];
      while (true) {
        if (r.k == 0)
          adopt(i);
        const auto t = r.window_start + offset_us(r, r.k);
        if (t >= t_end)
          break;
        if (cfg_.kind == NodeKind::machine) {
          emit_snapshot(i, machine_->snapshot(t));
        } else {
          double v;
          try {
            v = source_->sample(ch.signal, t);
          } catch (const Error &e) {
            if (e.code() != Errc::source_exhausted)
              throw;
            exhausted_ = true;
            return;
          }
          if (ch.adc) {
            double volts = (v - ch.adc->cal.offset) / ch.adc->cal.gain;
            std::uint32_t code = dsp::quantize_one(volts, ch.adc->spec);
            v = dsp::to_engineering_units(std::vector<std::uint32_t>{code}, ch.adc->spec, ch.adc->cal)[0];
          }
          r.buf.push_back(v);
        }
        if (++r.k == r.window) {
          if (cfg_.kind == NodeKind::sensor)
            emit_window(i);
          r.window_start += offset_us(r, r.window);
          r.k = 0;
        }
      }
    }
  }

  MeasurementMessage envelope(std::size_t i, ChannelRun &r) {
    const auto &ch = cfg_.channels[i];
    MeasurementMessage m;
    m.node_id = cfg_.node_id;
    m.channel = ch.name();
    m.seq = r.seq++;
    m.t_acq_us = clock_.corrected_us(r.window_start);
    m.mode = r.mode;
    m.unit = std::string(ch.descriptor.quantity.unit());
    m.fs_hz = r.fs;
    m.window_len = r.window;
    return m;
  }

  std::string data_topic(std::size_t i, ProcessingMode mode) const {
    auto kind = mode == ProcessingMode::raw ? TopicKind::raw : TopicKind::features;
    return render(build_topic(cfg_.site, cfg_.node_id, cfg_.channels[i].name(), kind));
  }

  void emit_window(std::size_t i) {
    auto &r = runs_[i];
    auto m = envelope(i, r);
    m.payload = apply_mode(r.buf, r.mode, r.decimation, r.fs);
    energy_.add_cpu(r.mode, r.window);
    ++stats_.windows;
    enqueue({data_topic(i, r.mode), encode_message(m), r.mode == ProcessingMode::raw ? 0 : 1});
    const auto &ch = cfg_.channels[i];
    if (ch.events && r.mode != ProcessingMode::raw) {
      auto events_topic = render(build_topic(cfg_.site, cfg_.node_id, ch.name(), TopicKind::events));
      for (const auto &e : dsp::detect_events(r.buf, *ch.events)) {
        nlohmann::json ev{{"node_id", cfg_.node_id},
                          {"channel", ch.name()},
                          {"seq", m.seq},
                          {"t_us", m.t_acq_us + offset_us(r, e.index)},
                          {"kind", std::string(dsp::to_string(e.kind))},
                          {"index", e.index},
                          {"value", r.buf[e.index]}};
        enqueue({events_topic, ev.dump(), 1});
      }
    }
  }

  void emit_snapshot(std::size_t i, FeatureMap features) {
    auto &r = runs_[i];
    auto m = envelope(i, r);
    m.payload = FeaturePayload{std::move(features)};
    ++stats_.windows;
    enqueue({data_topic(i, ProcessingMode::features), encode_message(m), 1});
  }

  void enqueue(Outgoing o) {
    if (buffer_.size() >= cfg_.buffer_capacity) {
      buffer_.pop_front();
      ++stats_.dropped_oldest;
    }
    buffer_.push_back(std::move(o));
  }

  bool send_now(const std::string &topic, const std::string &payload, int qos) {
    if (!transport_.publish(topic, payload, qos))
      return false;
    auto bytes = mqtt::publish_frame_size(topic.size(), payload.size(), qos);
    energy_.add_radio(bytes);
    if (observer_)
      observer_({topic, payload, qos, bytes});
    return true;
  }

  void flush() {
    while (!buffer_.empty() && transport_.connected()) {
      const auto &o = buffer_.front();
      if (!send_now(o.topic, o.payload, o.qos))
        break;
      ++stats_.published;
      buffer_.pop_front();
    }
  }

  NodeConfig cfg_;
  Transport &transport_;
  TimeFn now_true_;
  SignalSource *source_;
  MachinePort *machine_;
  ClockModel clock_;
  EnergyMeter energy_;
  std::string cmd_topic_, sync_topic_, ack_topic_;
  std::vector<ChannelRun> runs_;
  std::deque<Outgoing> buffer_;
  std::mutex inbox_mu_;
  std::vector<Inbound> inbox_;
  std::function<void(const SentRecord &)> observer_;
  NodeStats stats_;
  std::optional<SyncEstimate> last_sync_;
  std::string pending_sync_id_;
  std::int64_t pending_t1_ = 0;
  std::uint64_t sync_counter_ = 0;
  std::int64_t next_sync_ = 0;
  bool started_ = false;
  bool exhausted_ = false;
};

/// Steps a node from t0 in fixed increments until its source runs dry or
/// t_stop is reached. `on_tick` sees each step's end time before the node
/// does (virtual clocks hook in there). Returns the number of steps taken.
inline std::size_t run_acquisition_loop(SensorNode &node, std::int64_t t0, std::int64_t step_us,
                                        std::int64_t t_stop,
                                        const std::function<void(std::int64_t)> &on_tick = {}) {
  node.start(t0);
  std::size_t steps = 0;
  for (std::int64_t t = t0 + step_us; t <= t_stop && !node.exhausted(); t += step_us) {
    if (on_tick)
      on_tick(t);
    node.step(t);
    ++steps;
  }
  return steps;
}

} // namespace dsm::node
