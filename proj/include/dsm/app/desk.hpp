#pragma once

// The desk-scale plant + edge + cloud run. Everything advances on one
// virtual clock in scenario ticks; after each node step the graph is
// drained, so commands raised by scoring reach the machine at a fixed
// point in the tick order and a seeded run is byte-reproducible.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dsm/broker/local_transport.hpp"
#include "dsm/broker/sync_responder.hpp"
#include "dsm/cloud/uplink.hpp"
#include "dsm/node/config.hpp"
#include "dsm/node/sensor_node.hpp"
#include "dsm/sim/simulator.hpp"
#include "dsm/wires/broker_binding.hpp"
#include "dsm/wires/pipeline.hpp"

namespace dsm::app {

namespace fs = std::filesystem;
using nlohmann::json;

struct DeskOptions {
  sim::ScenarioConfig scenario;
  wires::GraphSpec graph;
  std::vector<node::NodeConfig> nodes;
  std::optional<ProcessingMode> mode; // overrides every sensor node
  fs::path out;
  cloud::SendFn cloud_send;                   // default: a store under out/sink
  std::shared_ptr<quality::ModelSlot> model;  // shared with an admin endpoint, if any
  std::size_t batch_lines = 64;
  int uplink_attempts = 10;
  bool realtime = false; // pace ticks to the wall clock
  /// Called after every tick with the tick's end time.
  std::function<void(std::int64_t, const sim::Simulator &)> on_tick;
  /// Passed to the graph: edge index, sent (true) or received, record id.
  std::function<void(std::size_t, bool, std::uint64_t)> on_edge;
  std::size_t queue_capacity = 1024;
  /// Called once the graph runs, before the first tick.
  std::function<void(broker::BrokerCore &, wires::Pipeline &)> on_start;
};

struct DeskResult {
  wires::PipelineStats pipeline;
  cloud::UplinkStats uplink;
  std::size_t ticks = 0;
};

/// Applies a mode to a sensor node and all of its channels.
inline void force_mode(node::NodeConfig &c, ProcessingMode m) {
  if (c.kind != node::NodeKind::sensor)
    return;
  c.mode = m;
  for (auto &ch : c.channels)
    ch.descriptor.mode = m;
}

namespace detail {

inline std::size_t payload_values(const std::string &payload) {
  try {
    return value_count(decode_message(payload).payload);
  } catch (const Error &) {
    return 0; // control traffic (sync, acks)
  }
}

inline void write_json(const fs::path &p, const json &j) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out)
    throw Error(Errc::io_error, p.string(), "cannot write");
}

} // namespace detail

inline json load_json_file(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw Error(Errc::config_invalid, p.string(), "cannot read");
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw Error(Errc::config_invalid, p.string(), "not valid JSON");
  return j;
}

/// Every *.json in dir, in file-name order.
inline std::vector<node::NodeConfig> load_nodes_dir(const fs::path &dir) {
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto &e : fs::directory_iterator(dir, ec))
    if (e.path().extension() == ".json")
      files.push_back(e.path());
  if (ec || files.empty())
    throw Error(Errc::config_invalid, dir.string(), "no node configs");
  std::sort(files.begin(), files.end());
  std::vector<node::NodeConfig> out;
  for (const auto &f : files)
    out.push_back(node::node_config_from_json(load_json_file(f), f.filename().string()));
  return out;
}

/// Loads a graph; relative score model paths are taken from the graph's
/// directory, since the run dir is elsewhere.
inline wires::GraphSpec load_graph_file(const fs::path &p, const std::optional<fs::path> &model = std::nullopt) {
  auto g = wires::require_graph(load_json_file(p));
  for (auto &s : g.stages)
    if (s.kind == "score") {
      if (model)
        s.params["model_path"] = fs::absolute(*model).string();
      fs::path m = s.params["model_path"].get<std::string>();
      if (m.is_relative())
        s.params["model_path"] = (fs::absolute(p).parent_path() / m).lexically_normal().string();
    }
  return g;
}

inline sim::ScenarioConfig load_scenario_file(const fs::path &p) {
  return sim::scenario_from_json(load_json_file(p), p.filename().string());
}

/// Runs one session and writes its artifacts into opts.out:
/// session.ndjson (plant log), traffic.ndjson (every frame a node sent),
/// deliveries.ndjson (every record a terminal stage emitted, with its
/// virtual emission time), metrics.json, plus whatever the graph's loggers
/// write. The report is built from these files afterwards.
inline DeskResult run_desk(DeskOptions o) {
  fs::create_directories(o.out);
  for (auto &n : o.nodes)
    if (o.mode)
      force_mode(n, *o.mode);

  std::ofstream session_log(o.out / "session.ndjson", std::ios::binary | std::ios::trunc);
  if (!session_log)
    throw Error(Errc::io_error, (o.out / "session.ndjson").string(), "cannot write");
  sim::Simulator plant(o.scenario, &session_log);
  const auto &sc = plant.config();

  std::int64_t now = sc.start_us;
  broker::BrokerCore core;
  broker::SyncResponder sync(core, [&] { return now; });

  std::unique_ptr<cloud::SinkStore> own_store;
  if (!o.cloud_send) {
    own_store = std::make_unique<cloud::SinkStore>(o.out / "sink");
    o.cloud_send = cloud::store_sender(*own_store);
  }
  cloud::UplinkOptions uo;
  uo.session_id = sc.session_id;
  uo.batch_lines = o.batch_lines;
  uo.max_attempts = o.uplink_attempts;
  cloud::Uplink uplink(uo, o.cloud_send, [&] { return now; });

  std::mutex emit_mu;
  std::map<std::string, std::vector<json>> deliveries;
  auto ctx = wires::broker_context(core);
  ctx.base_dir = o.out.string();
  ctx.now_us = [&] { return now; };
  ctx.on_edge = o.on_edge;
  ctx.queue_capacity = o.queue_capacity;
  if (o.model)
    ctx.model = o.model;
  ctx.cloud = [&](const std::string &line) { uplink.add_record(json::parse(line)); };
  ctx.on_emit = [&](const std::string &stage, const wires::WireRecord &r) {
    json d{{"t_us", r.t_us}, {"emitted_us", now}};
    for (const char *k : {"risk", "risk_alarm", "rec_spindle_rpm", "rec_feed_mm_s", "rec_risk"})
      if (auto it = r.values.find(k); it != r.values.end())
        d[k] = it->second;
    std::lock_guard lock(emit_mu);
    deliveries[stage].push_back(std::move(d));
  };

  wires::Pipeline pipeline(o.graph, ctx);
  pipeline.start(); // a StartupFailure leaves before any node runs

  struct NodeRig {
    std::unique_ptr<broker::LocalTransport> transport;
    std::unique_ptr<node::SensorNode> node;
  };
  std::vector<NodeRig> rigs;
  std::ofstream traffic(o.out / "traffic.ndjson", std::ios::binary | std::ios::trunc);
  for (const auto &cfg : o.nodes) {
    NodeRig rig;
    rig.transport = std::make_unique<broker::LocalTransport>(core, cfg.node_id);
    bool machine = cfg.kind == node::NodeKind::machine;
    rig.node = std::make_unique<node::SensorNode>(cfg, *rig.transport, [&] { return now; },
                                                  machine ? nullptr : &plant, machine ? &plant : nullptr);
    rig.node->set_observer([&, id = cfg.node_id](const node::SentRecord &s) {
      traffic << json{{"t_us", now},
                      {"node", id},
                      {"topic", s.topic},
                      {"qos", s.qos},
                      {"frame_bytes", s.frame_bytes},
                      {"values", detail::payload_values(s.payload)}}
                     .dump()
              << '\n';
    });
    rigs.push_back(std::move(rig));
  }
  if (o.on_start)
    o.on_start(core, pipeline);

  for (auto &r : rigs)
    r.node->start(sc.start_us);
  DeskResult res;
  std::size_t labels_sent = 0;
  const auto wall0 = std::chrono::steady_clock::now();
  for (std::int64_t t = sc.start_us; t < sc.end_us(); t += sc.tick_us) {
    now = t;
    plant.begin_tick(t);
    const std::int64_t t_end = t + sc.tick_us;
    now = t_end; // data of this tick leaves the nodes at its end
    for (auto &r : rigs) {
      r.node->step(t_end);
      pipeline.wait_idle();
    }
    const auto &labels = plant.labels();
    for (; labels_sent < labels.size(); ++labels_sent) {
      const auto &l = labels[labels_sent];
      uplink.add_label(l.t_us, l.defect, l.p, l.severity);
    }
    uplink.flush(); // whatever fails stays queued for the next tick
    ++res.ticks;
    if (o.on_tick)
      o.on_tick(t_end, plant);
    if (o.realtime)
      std::this_thread::sleep_until(wall0 + std::chrono::microseconds(t_end - sc.start_us));
  }

  json nodes = json::array();
  for (const auto &r : rigs) {
    const auto &c = r.node->config();
    const auto &st = r.node->stats();
    nodes.push_back({{"node_id", c.node_id},
                     {"kind", c.kind == node::NodeKind::machine ? "machine" : "sensor"},
                     {"mode", static_cast<int>(c.mode)},
                     {"windows", st.windows},
                     {"published", st.published},
                     {"dropped_oldest", st.dropped_oldest},
                     {"energy_cpu", r.node->energy().cpu()},
                     {"energy_radio", r.node->energy().radio()}});
  }

  // shutdown order: nodes, then gateway, then the cloud link
  rigs.clear();
  pipeline.stop();
  bool drained = false;
  for (int i = 0; i < 20 && !drained; ++i)
    drained = uplink.flush();
  plant.flush_samples();
  session_log.flush();

  res.pipeline = pipeline.stats();
  res.uplink = uplink.stats();

  std::ofstream dl(o.out / "deliveries.ndjson", std::ios::binary | std::ios::trunc);
  for (const auto &s : o.graph.stages)
    if (auto it = deliveries.find(s.id); it != deliveries.end())
      for (auto &d : it->second) {
        d["stage"] = s.id;
        dl << d.dump() << '\n';
      }

  json metrics{{"session_id", sc.session_id}, {"ticks", res.ticks}};
  metrics["pipeline"] = {{"consumed", res.pipeline.consumed},     {"emitted", res.pipeline.emitted},
                         {"join_drops", res.pipeline.join_drops}, {"window_drops", res.pipeline.window_drops},
                         {"dead", res.pipeline.dead},             {"commands_forwarded", res.pipeline.commands_forwarded},
                         {"acks_relayed", res.pipeline.acks_relayed}};
  metrics["uplink"] = {{"lines", res.uplink.lines},       {"batches", res.uplink.batches},
                       {"attempts", res.uplink.attempts}, {"failures", res.uplink.failures},
                       {"acked", res.uplink.acked},       {"rejected", res.uplink.rejected},
                       {"drained", drained}};
  metrics["nodes"] = std::move(nodes);
  detail::write_json(o.out / "metrics.json", metrics);
  if (!drained)
    throw Error(Errc::gateway_unreachable, "cloud-sink", "uplink could not deliver every batch");
  return res;
}

} // namespace dsm::app
