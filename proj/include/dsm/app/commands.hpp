#pragma once

// The dsm subcommands. Each one throws dsm::Error; the binary maps the code
// to an exit status. Includes httplib (sink and gateway admin HTTP).

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dsm/app/desk.hpp"
#include "dsm/app/report.hpp"
#include "dsm/broker/server.hpp"
#include "dsm/cloud/http.hpp"
#include "dsm/quality/train.hpp"
#include "dsm/sim/campaign.hpp"

namespace dsm::app {

struct CliArgs {
  std::string scenario;
  std::string graph;
  std::string nodes; // default: <scenario dir>/nodes
  std::string out;
  std::string gateway;
  std::string sink;
  std::string model;   // run: overrides score model_path; deploy: file to upload
  std::string session; // export filter
  std::optional<std::uint64_t> seed;
  std::optional<int> mode;
  std::optional<double> duration;
};

inline int exit_code_for(Errc c) {
  switch (c) {
  case Errc::config_invalid:
  case Errc::graph_invalid:
  case Errc::malformed_document:
  case Errc::schema_violation:
  case Errc::bad_token:
  case Errc::bad_filter:
  case Errc::bad_factor:
  case Errc::bad_thresholds:
  case Errc::parse_error:
    return 2;
  default:
    return 3;
  }
}

// ---- gateway admin endpoint ------------------------------------------------

/// GET /metrics (plain text counters), GET /v1/model, POST /v1/model (body:
/// model file; swapped in only if it validates).
class GatewayAdmin {
public:
  using MetricsFn = std::function<std::string()>;

  GatewayAdmin(std::shared_ptr<quality::ModelSlot> slot, MetricsFn metrics, std::string host = "127.0.0.1",
               int port = 0)
      : slot_(std::move(slot)), metrics_(std::move(metrics)), host_(std::move(host)), port_(port) {
    srv_.Get("/metrics", [this](const httplib::Request &, httplib::Response &res) {
      res.set_content(metrics_ ? metrics_() : std::string(), "text/plain; version=0.0.4");
    });
    srv_.Get("/v1/model", [this](const httplib::Request &, httplib::Response &res) {
      auto m = slot_->get();
      if (!m)
        return cloud::reply_json(res, 404, {{"error", "no model loaded"}});
      cloud::reply_json(res, 200, model_summary(*m));
    });
    srv_.Post("/v1/model", [this](const httplib::Request &req, httplib::Response &res) {
      try {
        auto m = quality::model_from_text(req.body);
        slot_->set(m);
        cloud::reply_json(res, 200, model_summary(m));
      } catch (const Error &e) {
        auto cur = slot_->get();
        cloud::reply_json(res, 400, {{"error", e.what()}, {"active_version", cur ? cur->version : ""}});
      }
    });
  }

  ~GatewayAdmin() { stop(); }

  void start() {
    if (port_ == 0)
      port_ = srv_.bind_to_any_port(host_);
    else if (!srv_.bind_to_port(host_, port_))
      port_ = -1;
    if (port_ <= 0)
      throw Error(Errc::startup_failure, "gateway", "cannot bind " + host_);
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }

  void stop() {
    srv_.stop();
    if (thread_.joinable())
      thread_.join();
  }

  int port() const { return port_; }

  static nlohmann::json model_summary(const quality::QualityModel &m) {
    return {{"version", m.version}, {"feature_names", m.feature_names}, {"threshold", m.threshold}};
  }

private:
  std::shared_ptr<quality::ModelSlot> slot_;
  MetricsFn metrics_;
  std::string host_;
  int port_;
  httplib::Server srv_;
  std::thread thread_;
};

inline std::string metrics_text(const broker::BrokerMetrics &b, const wires::PipelineStats &p) {
  std::ostringstream o;
  auto line = [&](const char *name, std::uint64_t v) { o << name << ' ' << v << '\n'; };
  line("dsm_broker_connections_live", b.connections_live);
  line("dsm_broker_connections_total", b.connections_total);
  line("dsm_broker_messages_in_total", b.messages_in);
  line("dsm_broker_messages_routed_total", b.messages_routed);
  line("dsm_broker_bytes_in_total", b.bytes_in);
  line("dsm_broker_bytes_out_total", b.bytes_out);
  line("dsm_broker_redeliveries_total", b.redeliveries);
  line("dsm_broker_evictions_total", b.evictions);
  line("dsm_pipeline_consumed_total", p.consumed);
  line("dsm_pipeline_emitted_total", p.emitted);
  line("dsm_pipeline_join_drops_total", p.join_drops);
  line("dsm_pipeline_window_drops_total", p.window_drops);
  line("dsm_pipeline_dead_total", p.dead);
  line("dsm_pipeline_commands_forwarded_total", p.commands_forwarded);
  return o.str();
}

// ---- run ------------------------------------------------------------------

namespace detail {

inline fs::path nodes_dir(const CliArgs &a, const fs::path &config) {
  return a.nodes.empty() ? config.parent_path() / "nodes" : fs::path(a.nodes);
}

inline void require(const std::string &v, const char *flag) {
  if (v.empty())
    throw Error(Errc::config_invalid, flag, "required");
}

/// Removes what a previous run left in dir, and nothing else.
inline void clear_run_dir(const fs::path &dir) {
  for (const char *f : {"session.ndjson", "traffic.ndjson", "deliveries.ndjson", "metrics.json", "report.json",
                        "report.txt"})
    fs::remove(dir / f);
  fs::remove_all(dir / "sink");
}

inline DeskOptions desk_options(const CliArgs &a) {
  require(a.scenario, "--scenario");
  require(a.graph, "--graph");
  DeskOptions o;
  o.scenario = load_scenario_file(a.scenario);
  if (a.seed)
    o.scenario.seed = *a.seed;
  if (a.duration)
    o.scenario.duration_s = *a.duration;
  sim::validate(o.scenario);
  o.graph = load_graph_file(a.graph, a.model.empty() ? std::nullopt : std::optional<fs::path>(a.model));
  o.nodes = load_nodes_dir(nodes_dir(a, a.scenario));
  if (a.mode) {
    if (!is_valid_mode(*a.mode))
      throw Error(Errc::config_invalid, "--mode", "expected 1, 2 or 3");
    o.mode = static_cast<ProcessingMode>(*a.mode);
  }
  o.out = a.out.empty() ? fs::path("run") : fs::path(a.out);
  return o;
}

} // namespace detail

/// One session: broker, gateway graph, cloud sink (local unless --sink
/// names a remote one), plant and nodes. With --gateway the admin endpoint
/// is up for the run and ticks follow the wall clock so a deploy can land.
inline nlohmann::json cmd_run(const CliArgs &a, std::ostream &log = std::cerr) {
  auto o = detail::desk_options(a);
  fs::create_directories(o.out);
  detail::clear_run_dir(o.out);

  std::unique_ptr<cloud::SinkStore> store;
  std::unique_ptr<cloud::SinkServer> sink;
  cloud::Address sink_addr;
  if (a.sink.empty()) {
    store = std::make_unique<cloud::SinkStore>(o.out / "sink");
    sink = std::make_unique<cloud::SinkServer>(*store);
    sink->start();
    sink_addr.port = sink->port();
  } else {
    sink_addr = cloud::parse_address(a.sink);
  }
  o.cloud_send = cloud::http_sender(sink_addr);
  log << "cloud sink " << sink_addr.host << ":" << sink_addr.port << "\n";

  o.model = std::make_shared<quality::ModelSlot>();
  std::unique_ptr<broker::BrokerServer> mqtt;
  std::unique_ptr<GatewayAdmin> admin;
  if (!a.gateway.empty()) {
    auto addr = cloud::parse_address(a.gateway);
    o.realtime = true;
    o.on_start = [&, addr](broker::BrokerCore &core, wires::Pipeline &p) {
      mqtt = std::make_unique<broker::BrokerServer>(core, addr.host, 0);
      mqtt->start();
      admin = std::make_unique<GatewayAdmin>(
          o.model, [&core, &p] { return metrics_text(core.metrics(), p.stats()); }, addr.host, addr.port);
      admin->start();
      log << "gateway admin http://" << addr.host << ":" << admin->port() << ", mqtt " << addr.host << ":"
          << mqtt->port() << "\n";
    };
  }
  try {
    run_desk(o);
  } catch (...) {
    admin.reset();
    mqtt.reset();
    throw;
  }
  admin.reset();
  mqtt.reset();
  return write_report(o.out);
}

// ---- compare-modes ----------------------------------------------------------

inline bool is_vibration_node(const node::NodeConfig &c) {
  return c.kind == node::NodeKind::sensor &&
         std::any_of(c.channels.begin(), c.channels.end(), [](const node::NodeChannel &ch) {
           return ch.descriptor.quantity.kind == QuantityKind::acceleration;
         });
}

/// The same seeded scenario under modes 1, 2 and 3, into out/mode<m>.
inline nlohmann::json cmd_compare_modes(const CliArgs &a, std::ostream &log = std::cerr) {
  auto base = detail::desk_options(a);
  std::set<std::string> vib;
  for (const auto &n : base.nodes)
    if (is_vibration_node(n))
      vib.insert(n.node_id);
  nlohmann::json rows = nlohmann::json::array();
  for (int m = 1; m <= 3; ++m) {
    auto o = base;
    o.mode = static_cast<ProcessingMode>(m);
    o.out = base.out / ("mode" + std::to_string(m));
    fs::create_directories(o.out);
    detail::clear_run_dir(o.out);
    log << "mode " << m << " -> " << o.out.string() << "\n";
    run_desk(o);
    auto r = write_report(o.out);
    std::uint64_t msgs = 0, values = 0, vib_bytes = 0, vib_msgs = 0;
    for (const auto &n : r["nodes"]) {
      if (n["kind"] != "sensor")
        continue;
      msgs += n["messages"].get<std::uint64_t>();
      values += n["values"].get<std::uint64_t>();
      if (vib.count(n["node_id"].get<std::string>())) {
        vib_bytes += n["bytes"].get<std::uint64_t>();
        vib_msgs += n["messages"].get<std::uint64_t>();
      }
    }
    rows.push_back({{"mode", m},
                    {"messages", msgs},
                    {"values", values},
                    {"bytes", r["sensor_bytes"]},
                    {"vibration_bytes", vib_bytes},
                    {"vibration_messages", vib_msgs},
                    {"energy_cpu", r["sensor_energy_cpu"]},
                    {"energy_radio", r["sensor_energy_radio"]},
                    {"gateway_records", r["pipeline"]["consumed"]}});
  }
  auto ratio = [&](const char *k) {
    double b2 = rows[1][k].get<double>();
    return b2 > 0 ? rows[0][k].get<double>() / b2 : 0.0;
  };
  nlohmann::json cmp{{"modes", rows}, {"bytes_ratio_mode1_mode2", ratio("bytes")},
                     {"vibration_bytes_ratio_mode1_mode2", ratio("vibration_bytes")}};
  std::ofstream(base.out / "compare.json", std::ios::binary | std::ios::trunc) << cmp.dump(2) << '\n';
  return cmp;
}

inline std::string compare_text(const nlohmann::json &c) {
  std::ostringstream o;
  o << "mode  messages     values       bytes  vib_bytes   cpu_energy  radio_energy  gateway_records\n";
  for (const auto &r : c["modes"]) {
    char line[200];
    std::snprintf(line, sizeof line, "%4d  %8llu  %9llu  %10llu  %9llu  %11.0f  %12.0f  %15llu\n", r["mode"].get<int>(),
                  static_cast<unsigned long long>(r["messages"].get<std::uint64_t>()),
                  static_cast<unsigned long long>(r["values"].get<std::uint64_t>()),
                  static_cast<unsigned long long>(r["bytes"].get<std::uint64_t>()),
                  static_cast<unsigned long long>(r["vibration_bytes"].get<std::uint64_t>()),
                  r["energy_cpu"].get<double>(), r["energy_radio"].get<double>(),
                  static_cast<unsigned long long>(r["gateway_records"].get<std::uint64_t>()));
    o << line;
  }
  o << "bytes mode1/mode2 " << format_fixed(c["bytes_ratio_mode1_mode2"].get<double>(), 2) << ", vibration "
    << format_fixed(c["vibration_bytes_ratio_mode1_mode2"].get<double>(), 2) << "\n";
  return o.str();
}

// ---- train ------------------------------------------------------------------

struct TrainingPlan {
  sim::CampaignConfig campaign;
  std::vector<std::string> features;
  quality::TrainOptions options;
  double threshold = 0.7;
  std::uint64_t seed = 11;
};

inline TrainingPlan training_plan_from_json(nlohmann::json doc, const std::string &path = "campaign") {
  if (!doc.is_object() || !doc.contains("training"))
    throw Error(Errc::config_invalid, path + ".training", "required");
  TrainingPlan p;
  auto t = doc["training"];
  doc.erase("training");
  p.campaign = sim::campaign_from_json(doc, path);
  ConfigReader r(t, path + ".training");
  for (const auto &f : r.array("features")) {
    if (!f.is_string())
      throw Error(Errc::config_invalid, r.at("features"), "expected feature names");
    p.features.push_back(f.get<std::string>());
  }
  if (p.features.empty())
    throw Error(Errc::config_invalid, r.at("features"), "at least one feature");
  p.options.lr = r.number("learning_rate", p.options.lr);
  p.options.l2 = r.number("l2", p.options.l2);
  p.options.epochs = static_cast<int>(r.count("epochs", static_cast<std::uint64_t>(p.options.epochs)));
  p.threshold = r.number("threshold", p.threshold);
  p.seed = r.count("seed", p.seed);
  r.finish();
  return p;
}

/// UTC timestamp of a microsecond epoch time.
inline std::string iso_utc(std::int64_t t_us) {
  std::time_t s = static_cast<std::time_t>(t_us / 1'000'000);
  std::tm tm{};
  gmtime_r(&s, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Phase 1: run the campaign through the collection graph into one sink,
/// export the labeled dataset and fit the model. --scenario names the
/// campaign file; --graph the collection graph.
inline nlohmann::json cmd_train(const CliArgs &a, std::ostream &log = std::cerr) {
  detail::require(a.scenario, "--scenario");
  detail::require(a.graph, "--graph");
  auto plan = training_plan_from_json(load_json_file(a.scenario), fs::path(a.scenario).filename().string());
  if (a.seed)
    plan.campaign.seed = *a.seed;
  auto graph = load_graph_file(a.graph);
  auto nodes = load_nodes_dir(detail::nodes_dir(a, a.scenario));
  fs::path out = a.out.empty() ? fs::path("train") : fs::path(a.out);
  fs::create_directories(out);
  fs::remove_all(out / "sink");
  fs::remove_all(out / "sessions");

  cloud::SinkStore store(out / "sink");
  auto scenarios = sim::expand_campaign(plan.campaign);
  for (const auto &sc : scenarios) {
    DeskOptions o;
    o.scenario = sc;
    o.graph = graph;
    o.nodes = nodes;
    if (a.mode)
      o.mode = static_cast<ProcessingMode>(*a.mode);
    o.out = out / "sessions" / sc.session_id;
    o.cloud_send = cloud::store_sender(store);
    run_desk(o);
  }
  log << scenarios.size() << " sessions collected\n";

  auto text = store.export_text("*");
  std::ofstream(out / "dataset.ndjson", std::ios::binary | std::ios::trunc) << text;
  auto rows = store.export_dataset("*");
  std::erase_if(rows, [](const quality::SessionRecord &r) { return !r.label; });

  auto rep = quality::train_model(rows, plan.features, plan.seed, plan.options, plan.threshold);
  nlohmann::json hyper{{"features", plan.features}, {"lr", plan.options.lr},   {"l2", plan.options.l2},
                       {"epochs", plan.options.epochs}, {"threshold", plan.threshold}, {"seed", plan.seed}};
  rep.model.version = "m-" + sha256_hex(text + hyper.dump()).substr(0, 12);
  rep.model.created_at = iso_utc(plan.campaign.start_us);
  quality::save_model(rep.model, (out / "model.json").string());

  nlohmann::json weights = nlohmann::json::object();
  for (std::size_t i = 0; i < rep.model.feature_names.size(); ++i)
    weights[rep.model.feature_names[i]] = rep.model.w[i];
  nlohmann::json summary{{"version", rep.model.version},
                         {"rows", rows.size()},
                         {"train_rows", rep.train_rows},
                         {"test_rows", rep.test_rows},
                         {"train_sessions", rep.train_sessions},
                         {"test_sessions", rep.test_sessions},
                         {"test_auc", std::isnan(rep.test_auc) ? nlohmann::json(nullptr) : nlohmann::json(rep.test_auc)},
                         {"test_accuracy", rep.test_accuracy},
                         {"train_auc", rep.train_auc},
                         {"weights", weights},
                         {"bias", rep.model.b},
                         {"dropped", rep.dropped},
                         {"final_loss", rep.loss_trace.empty() ? 0.0 : rep.loss_trace.back()},
                         {"loss_trace", rep.loss_trace}};
  std::ofstream(out / "training.json", std::ios::binary | std::ios::trunc) << summary.dump(2) << '\n';
  return summary;
}

inline std::string training_text(const nlohmann::json &s) {
  std::ostringstream o;
  o << "model " << s["version"].get<std::string>() << ": " << s["train_rows"] << " training rows, " << s["test_rows"]
    << " held out\n";
  o << "held-out AUC "
    << (s["test_auc"].is_null() ? std::string("n/a") : format_fixed(s["test_auc"].get<double>(), 4)) << ", accuracy "
    << format_fixed(s["test_accuracy"].get<double>(), 4) << "\n";
  for (const auto &[k, v] : s["weights"].items())
    o << "  w[" << k << "] = " << format_fixed(v.get<double>(), 4) << "\n";
  o << "  b = " << format_fixed(s["bias"].get<double>(), 4) << "\n";
  return o.str();
}

// ---- deploy -------------------------------------------------------------------

/// Uploads a model file to a running gateway; returns the active version.
inline std::string cmd_deploy(const std::string &model_file, const std::string &gateway) {
  detail::require(model_file, "model file");
  detail::require(gateway, "--gateway");
  auto addr = cloud::parse_address(gateway);
  std::ifstream in(model_file, std::ios::binary);
  if (!in)
    throw Error(Errc::invalid_model_file, model_file, "cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  httplib::Client c(addr.host, addr.port);
  c.set_connection_timeout(2);
  auto res = c.Post("/v1/model", ss.str(), "application/json");
  if (!res)
    throw Error(Errc::gateway_unreachable, gateway, "no answer");
  auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (res->status != 200 || j.is_discarded())
    throw Error(Errc::invalid_model_file, model_file,
                "gateway refused it" + (j.is_discarded() ? std::string() : ": " + j.value("error", "")) +
                    "; active version stays " + (j.is_discarded() ? std::string("?") : j.value("active_version", "")));
  return j.value("version", "");
}

// ---- export / report ------------------------------------------------------------

/// Labeled dataset from a sink: --sink address, else the store under --out.
inline std::string cmd_export(const CliArgs &a) {
  if (!a.sink.empty())
    return cloud::fetch_export(cloud::parse_address(a.sink), a.session);
  fs::path root = (a.out.empty() ? fs::path("run") : fs::path(a.out)) / "sink";
  if (!fs::exists(root / "sessions"))
    throw Error(Errc::no_sessions, root.string(), "no sink store here");
  return cloud::SinkStore(root).export_text(a.session);
}

inline nlohmann::json cmd_report(const CliArgs &a) { return write_report(a.out.empty() ? fs::path("run") : fs::path(a.out)); }

} // namespace dsm::app
