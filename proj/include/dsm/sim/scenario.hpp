#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsm/core/config_reader.hpp"
#include "dsm/sim/plant.hpp"

namespace dsm::sim {

struct DefectEpisode {
  double t_start_s = 0;
  double t_end_s = 0;
  double severity = 1.0;
};

/// A scripted setpoint change at t_s; unset fields keep their value.
/// tool_wear models a tool change.
struct ScheduleEntry {
  double t_s = 0;
  std::optional<double> spindle_rpm;
  std::optional<double> feed_mm_s;
  std::optional<double> tool_wear;
};

struct ScenarioConfig {
  std::string session_id = "run";
  double duration_s = 60;
  std::uint64_t seed = 42;
  std::int64_t start_us = 1'700'000'000'000'000;
  std::int64_t tick_us = 256'000;
  MachineState initial{12000, 20, 0.3, 8, true};
  EnvState env{};
  double wear_rate_per_s = 0.002;
  RiskCoefficients risk{};
  VibrationModel vibration{};
  AirflowModel airflow{};
  AmbientModel ambient{};
  std::vector<DefectEpisode> defect_episodes;
  std::vector<ScheduleEntry> schedule;
  /// Nominal sampling grid per signal, used to pack the session log.
  std::map<std::string, double> signal_rates{{"vib_x", 1000},       {"vib_y", 1000},        {"vib_z", 1000},
                                             {"airflow_speed", 125}, {"airflow_temp", 125}, {"amb_temp", 2},
                                             {"amb_humidity", 2},    {"amb_pressure", 2}};

  std::int64_t end_us() const { return start_us + static_cast<std::int64_t>(std::llround(duration_s * 1e6)); }
};

inline void validate(const ScenarioConfig &c) {
  auto bad = [](const std::string &field, const std::string &why) { throw Error(Errc::config_invalid, field, why); };
  if (!(c.duration_s >= 0))
    bad("duration_s", "must be >= 0");
  if (c.tick_us <= 0)
    bad("tick_ms", "must be > 0");
  if (c.start_us <= 0)
    bad("start_us", "must be > 0");
  auto check_state = [&](double rpm, double feed, double wear, const std::string &where) {
    if (rpm < rpm_min || rpm > rpm_max)
      bad(where + ".spindle_rpm", "outside [3000, 24000]");
    if (feed < feed_min || feed > feed_max)
      bad(where + ".feed_mm_s", "outside [1, 50]");
    if (wear < 0 || wear > 1)
      bad(where + ".tool_wear", "outside [0, 1]");
  };
  check_state(c.initial.spindle_rpm, c.initial.feed_mm_s, c.initial.tool_wear, "initial");
  for (std::size_t i = 0; i < c.defect_episodes.size(); ++i) {
    const auto &e = c.defect_episodes[i];
    auto where = "defect_episodes[" + std::to_string(i) + "]";
    if (!(e.t_start_s >= 0 && e.t_end_s > e.t_start_s && e.t_end_s <= c.duration_s))
      bad(where, "episode must lie within the scenario duration");
    if (!(e.severity >= 0 && e.severity <= 1))
      bad(where + ".severity", "outside [0, 1]");
  }
  for (std::size_t i = 0; i < c.schedule.size(); ++i) {
    const auto &s = c.schedule[i];
    auto where = "schedule[" + std::to_string(i) + "]";
    if (!(s.t_s >= 0 && s.t_s <= c.duration_s))
      bad(where + ".t_s", "outside the scenario");
    if (i > 0 && s.t_s < c.schedule[i - 1].t_s)
      bad(where + ".t_s", "schedule must be sorted by time");
    check_state(s.spindle_rpm.value_or(c.initial.spindle_rpm), s.feed_mm_s.value_or(c.initial.feed_mm_s),
                s.tool_wear.value_or(0), where);
  }
  if (c.env.humidity_pct < 0 || c.env.humidity_pct > 100)
    bad("env.humidity_pct", "outside [0, 100]");
  for (const auto &[sig, fs] : c.signal_rates)
    if (!(fs > 0))
      bad("signal_rates." + sig, "must be > 0");
}

inline ScenarioConfig scenario_from_json(const json &doc, const std::string &path = "scenario") {
  ScenarioConfig c;
  ConfigReader r(doc, path);
  c.session_id = r.string("session_id", c.session_id);
  c.duration_s = r.number("duration_s", c.duration_s);
  c.seed = r.count("seed", c.seed);
  c.start_us = r.integer("start_us", c.start_us);
  c.tick_us = static_cast<std::int64_t>(r.count("tick_ms", static_cast<std::uint64_t>(c.tick_us / 1000))) * 1000;
  c.wear_rate_per_s = r.number("wear_rate_per_s", c.wear_rate_per_s);
  if (r.has("initial")) {
    auto o = r.object("initial");
    c.initial.spindle_rpm = o.number("spindle_rpm", c.initial.spindle_rpm);
    c.initial.feed_mm_s = o.number("feed_mm_s", c.initial.feed_mm_s);
    c.initial.tool_wear = o.number("tool_wear", c.initial.tool_wear);
    o.finish();
  }
  if (r.has("env")) {
    auto o = r.object("env");
    c.env.temp_c = o.number("temp_c", c.env.temp_c);
    c.env.humidity_pct = o.number("humidity_pct", c.env.humidity_pct);
    c.env.pressure_hpa = o.number("pressure_hpa", c.env.pressure_hpa);
    o.finish();
  }
  if (r.has("risk_coefficients")) {
    auto v = r.numbers("risk_coefficients");
    if (v.size() != 6)
      throw Error(Errc::config_invalid, r.at("risk_coefficients"), "expected 6 numbers c0..c5");
    std::copy(v.begin(), v.end(), c.risk.c.begin());
  }
  if (r.has("vibration")) {
    auto o = r.object("vibration");
    c.vibration.a0 = o.number("a0", c.vibration.a0);
    c.vibration.a1 = o.number("a1", c.vibration.a1);
    c.vibration.a2 = o.number("a2", c.vibration.a2);
    c.vibration.noise_sd = o.number("noise_sd", c.vibration.noise_sd);
    if (o.has("axis_gain")) {
      auto g = o.numbers("axis_gain");
      if (g.size() != 3)
        throw Error(Errc::config_invalid, o.at("axis_gain"), "expected 3 gains");
      std::copy(g.begin(), g.end(), c.vibration.axis_gain.begin());
    }
    o.finish();
  }
  if (r.has("airflow")) {
    auto o = r.object("airflow");
    c.airflow.nominal_m_s = o.number("nominal_m_s", c.airflow.nominal_m_s);
    c.airflow.leak_per_severity = o.number("leak_per_severity", c.airflow.leak_per_severity);
    c.airflow.noise_sd = o.number("noise_sd", c.airflow.noise_sd);
    c.airflow.temp_base_c = o.number("temp_base_c", c.airflow.temp_base_c);
    c.airflow.temp_per_feed = o.number("temp_per_feed", c.airflow.temp_per_feed);
    c.airflow.temp_noise_sd = o.number("temp_noise_sd", c.airflow.temp_noise_sd);
    o.finish();
  }
  if (r.has("ambient")) {
    auto o = r.object("ambient");
    c.ambient.step_temp = o.number("step_temp", c.ambient.step_temp);
    c.ambient.step_humidity = o.number("step_humidity", c.ambient.step_humidity);
    c.ambient.step_pressure = o.number("step_pressure", c.ambient.step_pressure);
    c.ambient.max_dev_temp = o.number("max_dev_temp", c.ambient.max_dev_temp);
    c.ambient.max_dev_humidity = o.number("max_dev_humidity", c.ambient.max_dev_humidity);
    c.ambient.max_dev_pressure = o.number("max_dev_pressure", c.ambient.max_dev_pressure);
    c.ambient.sensor_noise_sd = o.number("sensor_noise_sd", c.ambient.sensor_noise_sd);
    o.finish();
  }
  if (r.has("defect_episodes")) {
    const auto &arr = r.array("defect_episodes");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ConfigReader o(arr[i], r.at("defect_episodes") + "[" + std::to_string(i) + "]");
      DefectEpisode e;
      e.t_start_s = o.number("t_start_s");
      e.t_end_s = o.number("t_end_s");
      e.severity = o.number("severity", 1.0);
      o.finish();
      c.defect_episodes.push_back(e);
    }
  }
  if (r.has("schedule")) {
    const auto &arr = r.array("schedule");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ConfigReader o(arr[i], r.at("schedule") + "[" + std::to_string(i) + "]");
      ScheduleEntry s;
      s.t_s = o.number("t_s");
      if (o.has("spindle_rpm"))
        s.spindle_rpm = o.number("spindle_rpm");
      if (o.has("feed_mm_s"))
        s.feed_mm_s = o.number("feed_mm_s");
      if (o.has("tool_wear"))
        s.tool_wear = o.number("tool_wear");
      o.finish();
      c.schedule.push_back(s);
    }
  }
  if (r.has("signal_rates")) {
    auto o = r.object("signal_rates");
    for (auto &[sig, fs] : c.signal_rates)
      fs = o.number(sig, fs);
    o.finish();
  }
  r.finish();
  validate(c);
  return c;
}

inline json scenario_to_json(const ScenarioConfig &c) {
  json j;
  j["session_id"] = c.session_id;
  j["duration_s"] = c.duration_s;
  j["seed"] = c.seed;
  j["start_us"] = c.start_us;
  j["tick_ms"] = c.tick_us / 1000;
  j["wear_rate_per_s"] = c.wear_rate_per_s;
  j["initial"] = {{"spindle_rpm", c.initial.spindle_rpm},
                  {"feed_mm_s", c.initial.feed_mm_s},
                  {"tool_wear", c.initial.tool_wear}};
  j["env"] = {{"temp_c", c.env.temp_c}, {"humidity_pct", c.env.humidity_pct}, {"pressure_hpa", c.env.pressure_hpa}};
  j["risk_coefficients"] = c.risk.c;
  j["vibration"] = {{"a0", c.vibration.a0},
                    {"a1", c.vibration.a1},
                    {"a2", c.vibration.a2},
                    {"noise_sd", c.vibration.noise_sd},
                    {"axis_gain", c.vibration.axis_gain}};
  j["airflow"] = {{"nominal_m_s", c.airflow.nominal_m_s},     {"leak_per_severity", c.airflow.leak_per_severity},
                  {"noise_sd", c.airflow.noise_sd},           {"temp_base_c", c.airflow.temp_base_c},
                  {"temp_per_feed", c.airflow.temp_per_feed}, {"temp_noise_sd", c.airflow.temp_noise_sd}};
  j["ambient"] = {{"step_temp", c.ambient.step_temp},
                  {"step_humidity", c.ambient.step_humidity},
                  {"step_pressure", c.ambient.step_pressure},
                  {"max_dev_temp", c.ambient.max_dev_temp},
                  {"max_dev_humidity", c.ambient.max_dev_humidity},
                  {"max_dev_pressure", c.ambient.max_dev_pressure},
                  {"sensor_noise_sd", c.ambient.sensor_noise_sd}};
  j["defect_episodes"] = json::array();
  for (const auto &e : c.defect_episodes)
    j["defect_episodes"].push_back({{"t_start_s", e.t_start_s}, {"t_end_s", e.t_end_s}, {"severity", e.severity}});
  j["schedule"] = json::array();
  for (const auto &s : c.schedule) {
    json e{{"t_s", s.t_s}};
    if (s.spindle_rpm)
      e["spindle_rpm"] = *s.spindle_rpm;
    if (s.feed_mm_s)
      e["feed_mm_s"] = *s.feed_mm_s;
    if (s.tool_wear)
      e["tool_wear"] = *s.tool_wear;
    j["schedule"].push_back(e);
  }
  j["signal_rates"] = c.signal_rates;
  return j;
}

} // namespace dsm::sim
