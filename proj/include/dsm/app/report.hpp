#pragma once

// Run report, rebuilt from the artifacts a desk run leaves behind. It never
// looks at live objects, so `report` on an old run dir gives the same text.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/core/error.hpp"
#include "dsm/sim/plant.hpp"

namespace dsm::app {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::vector<json> read_ndjson(const fs::path &p, bool required = true) {
  std::vector<json> out;
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    if (required)
      throw Error(Errc::io_error, p.string(), "missing run artifact");
    return out;
  }
  std::string line;
  while (std::getline(in, line))
    if (!line.empty())
      out.push_back(json::parse(line));
  return out;
}

/// Nearest-rank percentile of a sorted list.
inline double percentile(const std::vector<double> &sorted, double q) {
  if (sorted.empty())
    return 0;
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

/// How early an alarm may precede an episode, or trail it, and still count.
inline constexpr std::int64_t alarm_slack_us = 1'000'000;

inline json build_report(const fs::path &dir) {
  const auto session = read_ndjson(dir / "session.ndjson");
  const auto traffic = read_ndjson(dir / "traffic.ndjson");
  const auto deliveries = read_ndjson(dir / "deliveries.ndjson");
  json metrics;
  {
    std::ifstream in(dir / "metrics.json");
    if (!in)
      throw Error(Errc::io_error, (dir / "metrics.json").string(), "missing run artifact");
    metrics = json::parse(in);
  }
  if (session.empty() || session.front().value("kind", "") != "scenario")
    throw Error(Errc::io_error, (dir / "session.ndjson").string(), "no scenario header");
  const json &sc = session.front()["config"];
  const std::int64_t start = sc["start_us"].get<std::int64_t>();
  const std::int64_t tick = sc["tick_ms"].get<std::int64_t>() * 1000;

  json rep{{"session_id", sc["session_id"]}, {"duration_s", sc["duration_s"]}, {"seed", sc["seed"]}};

  // traffic per node
  std::map<std::string, json> nodes;
  for (const auto &n : metrics["nodes"])
    nodes[n["node_id"].get<std::string>()] = {{"kind", n["kind"]},
                                              {"mode", n["mode"]},
                                              {"windows", n["windows"]},
                                              {"messages", 0},
                                              {"values", 0},
                                              {"bytes", 0},
                                              {"control_bytes", 0},
                                              {"energy_cpu", n["energy_cpu"]},
                                              {"energy_radio", n["energy_radio"]}};
  std::uint64_t sensor_bytes = 0;
  for (const auto &t : traffic) {
    auto &n = nodes[t["node"].get<std::string>()];
    auto bytes = t["frame_bytes"].get<std::uint64_t>();
    auto values = t["values"].get<std::uint64_t>();
    if (values == 0) {
      n["control_bytes"] = n.value("control_bytes", std::uint64_t{0}) + bytes;
      continue;
    }
    n["messages"] = n.value("messages", std::uint64_t{0}) + 1;
    n["values"] = n.value("values", std::uint64_t{0}) + values;
    n["bytes"] = n.value("bytes", std::uint64_t{0}) + bytes;
    if (n.value("kind", "sensor") == "sensor")
      sensor_bytes += bytes;
  }
  double cpu = 0, radio = 0;
  json node_list = json::array();
  for (auto &[id, n] : nodes) {
    n["node_id"] = id;
    if (n.value("kind", "") == "sensor") {
      cpu += n.value("energy_cpu", 0.0);
      radio += n.value("energy_radio", 0.0);
    }
    node_list.push_back(n);
  }
  rep["nodes"] = node_list;
  rep["sensor_bytes"] = sensor_bytes;
  rep["sensor_energy_cpu"] = cpu;
  rep["sensor_energy_radio"] = radio;

  // latency per terminal stage, virtual time from window start to emission
  std::vector<std::string> stage_order;
  std::map<std::string, std::vector<double>> lat;
  for (const auto &d : deliveries) {
    auto s = d["stage"].get<std::string>();
    if (!lat.count(s))
      stage_order.push_back(s);
    lat[s].push_back(static_cast<double>(d["emitted_us"].get<std::int64_t>() - d["t_us"].get<std::int64_t>()) / 1000.0);
  }
  json latency = json::array();
  for (const auto &s : stage_order) {
    auto v = lat[s];
    std::sort(v.begin(), v.end());
    latency.push_back({{"stage", s},
                       {"records", v.size()},
                       {"p50_ms", percentile(v, 50)},
                       {"p95_ms", percentile(v, 95)},
                       {"p99_ms", percentile(v, 99)},
                       {"max_ms", v.back()}});
  }
  rep["latency"] = latency;

  // alarms vs ground-truth episodes. Alarms are read from the first stage
  // that delivers risk_alarm, so fan-out copies are not counted twice.
  std::string alarm_stage;
  for (const auto &d : deliveries)
    if (d.contains("risk_alarm")) {
      alarm_stage = d["stage"].get<std::string>();
      break;
    }
  std::vector<std::int64_t> alarms;
  for (const auto &d : deliveries)
    if (d["stage"] == alarm_stage && d.value("risk_alarm", 0.0) >= 1.0)
      alarms.push_back(d["t_us"].get<std::int64_t>());
  std::sort(alarms.begin(), alarms.end());

  std::vector<json> commands, states;
  for (const auto &l : session) {
    auto k = l.value("kind", "");
    if (k == "state")
      states.push_back(l);
    else if (k == "command")
      commands.push_back(l);
  }
  sim::RiskCoefficients coeff;
  for (std::size_t i = 0; i < coeff.c.size(); ++i)
    coeff.c[i] = sc["risk_coefficients"][i].get<double>();
  sim::AirflowModel air;
  air.nominal_m_s = sc["airflow"]["nominal_m_s"].get<double>();
  air.leak_per_severity = sc["airflow"]["leak_per_severity"].get<double>();
  auto state_risk = [&](const json &s, double severity) {
    sim::MachineState m;
    m.spindle_rpm = s["spindle_rpm"].get<double>();
    m.feed_mm_s = s["feed_mm_s"].get<double>();
    m.tool_wear = s["tool_wear"].get<double>();
    m.vacuum_airflow_m_s = sim::airflow_clean(air, severity);
    return sim::ground_truth_risk(m, severity, coeff);
  };

  json episodes = json::array();
  std::set<std::int64_t> explained;
  for (const auto &e : sc["defect_episodes"]) {
    auto on = start + std::llround(e["t_start_s"].get<double>() * 1e6);
    auto off = start + std::llround(e["t_end_s"].get<double>() * 1e6);
    json ep{{"t_start_s", e["t_start_s"]}, {"t_end_s", e["t_end_s"]}, {"severity", e["severity"]}, {"detected", false}};
    for (auto a : alarms)
      if (a >= on - alarm_slack_us && a <= off + alarm_slack_us) {
        explained.insert(a);
        if (!ep["detected"].get<bool>()) {
          ep["detected"] = true;
          ep["first_alarm_t_us"] = a;
          ep["lag_s"] = static_cast<double>(a - on) * 1e-6;
          // windows after the one containing the onset; alarm times are
          // window starts give or take the node clock error
          std::int64_t onset_w = (on - start) / tick, alarm_w = (a - start + tick / 2) / tick;
          ep["lag_windows"] = std::max<std::int64_t>(0, alarm_w - onset_w);
        }
      }
    // ground-truth risk under this episode's defect at the setpoints just
    // before and just after the first command that landed inside it
    for (const auto &c : commands) {
      auto t = c["t_us"].get<std::int64_t>();
      if (!c.value("applied", false) || t < on || t >= off)
        continue;
      const json *before = nullptr, *after = nullptr;
      for (const auto &s : states) {
        auto ts = s["t_us"].get<std::int64_t>();
        if (ts < t)
          before = &s;
        else if (ts == t)
          after = &s;
      }
      if (before && after) {
        double sev = e["severity"].get<double>();
        double rb = state_risk(*before, sev), ra = state_risk(*after, sev);
        ep["command_t_us"] = t;
        ep["command_params"] = c["params"];
        ep["risk_before"] = rb;
        ep["risk_after"] = ra;
        ep["risk_reduction"] = rb > 0 ? 1.0 - ra / rb : 0.0;
      }
      break;
    }
    episodes.push_back(ep);
  }
  rep["episodes"] = episodes;
  rep["alarm_stage"] = alarm_stage;
  rep["alarms"] = alarms.size();
  rep["false_alarms"] = alarms.size() - explained.size();

  json by_origin = json::object();
  for (const auto &c : commands) {
    auto &o = by_origin[c.value("origin", "?")];
    if (o.is_null())
      o = {{"applied", 0}, {"rejected", 0}};
    auto key = c.value("applied", false) ? "applied" : "rejected";
    o[key] = o[key].get<int>() + 1;
  }
  rep["commands"] = by_origin;

  auto p = metrics["pipeline"];
  p["conserved"] = p["consumed"].get<std::uint64_t>() ==
                   p["emitted"].get<std::uint64_t>() + p["join_drops"].get<std::uint64_t>() +
                       p["window_drops"].get<std::uint64_t>() + p["dead"].get<std::uint64_t>();
  rep["pipeline"] = p;
  rep["cloud"] = metrics["uplink"];
  return rep;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string report_text(const json &r) {
  std::ostringstream o;
  o << "session " << r["session_id"].get<std::string>() << "  duration " << format_fixed(r["duration_s"].get<double>(), 1)
    << " s  seed " << r["seed"] << "\n\n";
  o << "node        kind     mode  messages    values      bytes   cpu_energy  radio_energy\n";
  for (const auto &n : r["nodes"]) {
    char line[200];
    std::snprintf(line, sizeof line, "%-10s  %-7s  %4d  %8llu  %8llu  %9llu  %11.0f  %12.0f\n",
                  n["node_id"].get<std::string>().c_str(), n["kind"].get<std::string>().c_str(), n["mode"].get<int>(),
                  static_cast<unsigned long long>(n["messages"].get<std::uint64_t>()),
                  static_cast<unsigned long long>(n["values"].get<std::uint64_t>()),
                  static_cast<unsigned long long>(n["bytes"].get<std::uint64_t>()), n["energy_cpu"].get<double>(),
                  n["energy_radio"].get<double>());
    o << line;
  }
  o << "sensor bytes " << r["sensor_bytes"] << "\n\n";
  for (const auto &l : r["latency"])
    o << "latency " << l["stage"].get<std::string>() << ": n=" << l["records"] << " p50 "
      << format_fixed(l["p50_ms"].get<double>(), 1) << " ms, p95 " << format_fixed(l["p95_ms"].get<double>(), 1)
      << " ms, p99 " << format_fixed(l["p99_ms"].get<double>(), 1) << " ms\n";
  for (const auto &e : r["episodes"]) {
    o << "episode " << format_fixed(e["t_start_s"].get<double>(), 2) << "-" << format_fixed(e["t_end_s"].get<double>(), 2)
      << " s severity " << format_fixed(e["severity"].get<double>(), 2) << ": ";
    if (e["detected"].get<bool>())
      o << "alarm after " << format_fixed(e["lag_s"].get<double>(), 3) << " s (" << e["lag_windows"] << " windows)";
    else
      o << "not detected";
    if (e.contains("risk_reduction"))
      o << ", risk " << format_fixed(e["risk_before"].get<double>(), 3) << " -> "
        << format_fixed(e["risk_after"].get<double>(), 3);
    o << "\n";
  }
  o << "alarms " << r["alarms"] << ", false alarms " << r["false_alarms"] << "\n";
  for (const auto &[origin, c] : r["commands"].items())
    o << "commands from " << origin << ": " << c["applied"] << " applied, " << c["rejected"] << " rejected\n";
  const auto &p = r["pipeline"];
  o << "pipeline consumed " << p["consumed"] << " = emitted " << p["emitted"] << " + join drops " << p["join_drops"]
    << " + window drops " << p["window_drops"] << " + dead " << p["dead"]
    << (p["conserved"].get<bool>() ? "" : "  (NOT CONSERVED)") << "\n";
  const auto &c = r["cloud"];
  o << "cloud " << c["lines"] << " lines in " << c["batches"] << " batches, " << c["failures"] << " failed attempts\n";
  return o.str();
}

/// Writes report.json and report.txt next to the artifacts.
inline json write_report(const fs::path &dir) {
  auto r = build_report(dir);
  std::ofstream(dir / "report.json", std::ios::binary | std::ios::trunc) << r.dump(2) << '\n';
  std::ofstream(dir / "report.txt", std::ios::binary | std::ios::trunc) << report_text(r);
  return r;
}

} // namespace dsm::app
