#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsm/core/error.hpp"
#include "dsm/node/source.hpp"
#include "dsm/sim/plant.hpp"
#include "dsm/sim/rng.hpp"
#include "dsm/sim/scenario.hpp"

namespace dsm::sim {

inline const std::vector<std::string> &signal_names() {
  static const std::vector<std::string> names{"vib_x",        "vib_y",    "vib_z",        "airflow_speed",
                                              "airflow_temp", "amb_temp", "amb_humidity", "amb_pressure"};
  return names;
}

struct LabelRow {
  std::int64_t t_us = 0;
  double p = 0;
  bool defect = false;
  double severity = 0;
};

/// The trimming cell. State is piecewise constant over ticks: begin_tick
/// applies due commands and schedule entries, advances wear and the ambient
/// walk and draws the labels that fall inside the tick. Samples anywhere in
/// the tick then see that state. Sample noise is keyed by (signal, time).
///
/// Session log lines (NDJSON): "scenario" header, "state" on every change,
/// "command" per accepted or rejected request, "label" per second and
/// "samples" runs of queried values on each signal's nominal grid.
class Simulator : public node::SignalSource, public node::MachinePort {
public:
  explicit Simulator(ScenarioConfig cfg, std::ostream *log = nullptr) : cfg_(std::move(cfg)), log_(log) {
    validate(cfg_);
    state_ = cfg_.initial;
    env0_ = env_ = cfg_.env;
    labels_rng_.emplace(cfg_.seed, "labels");
    ambient_rng_.emplace(cfg_.seed, "ambient");
    for (const auto &s : signal_names())
      name_hash_[s] = fnv1a64(s);
    tick_start_ = cfg_.start_us;
    write({{"kind", "scenario"}, {"session_id", cfg_.session_id}, {"config", scenario_to_json(cfg_)}});
  }

  ~Simulator() override { flush_samples(); }

  const ScenarioConfig &config() const { return cfg_; }
  std::int64_t start_us() const { return cfg_.start_us; }
  std::int64_t end_us() const { return cfg_.end_us(); }

  /// Opens the tick [t_us, t_us + tick). Ticks must be opened in order.
  void begin_tick(std::int64_t t_us) {
    if (started_ && t_us < tick_start_)
      throw Error(Errc::invariant_violation, "simulator", "ticks must advance");
    flush_samples();
    const double dt = started_ ? static_cast<double>(t_us - tick_start_) * 1e-6 : 0.0;
    tick_start_ = t_us;
    started_ = true;
    bool changed = !logged_state_;

    if (dt > 0) {
      if (state_.cutting && state_.tool_wear < 1.0) {
        state_.tool_wear = std::min(1.0, state_.tool_wear + cfg_.wear_rate_per_s * dt);
      }
      walk_ambient();
    }
    const double t_s = seconds(t_us);
    while (next_schedule_ < cfg_.schedule.size() && cfg_.schedule[next_schedule_].t_s <= t_s + 1e-9) {
      const auto &e = cfg_.schedule[next_schedule_++];
      if (e.spindle_rpm)
        state_.spindle_rpm = *e.spindle_rpm;
      if (e.feed_mm_s)
        state_.feed_mm_s = *e.feed_mm_s;
      if (e.tool_wear)
        state_.tool_wear = *e.tool_wear;
      changed = true;
    }
    {
      std::lock_guard lock(cmd_mu_);
      for (auto &c : pending_) {
        if (c.spindle_rpm)
          state_.spindle_rpm = *c.spindle_rpm;
        if (c.feed_mm_s)
          state_.feed_mm_s = *c.feed_mm_s;
        write({{"kind", "command"},
               {"t_us", t_us},
               {"origin", c.origin},
               {"params", c.params},
               {"applied", true}});
        changed = true;
      }
      pending_.clear();
    }
    state_.vacuum_airflow_m_s = airflow_clean(cfg_.airflow, severity_at(t_us));
    if (state_.vacuum_airflow_m_s != last_airflow_)
      changed = true;
    last_airflow_ = state_.vacuum_airflow_m_s;
    if (changed) {
      log_state(t_us);
      logged_state_ = true;
    }
    draw_labels(t_us, t_us + cfg_.tick_us);
  }

  double sample(const std::string &signal, std::int64_t t_us) override {
    if (t_us >= cfg_.end_us() || t_us < cfg_.start_us)
      throw Error(Errc::source_exhausted, signal, "outside the scenario");
    auto h = name_hash_.find(signal);
    if (h == name_hash_.end())
      throw Error(Errc::source_exhausted, signal, "unknown signal");
    const double v = value(signal, h->second, t_us);
    record_sample(signal, t_us, v);
    return v;
  }

  FeatureMap snapshot(std::int64_t) override {
    return {{"spindle_rpm", state_.spindle_rpm},
            {"feed_mm_s", state_.feed_mm_s},
            {"tool_wear", state_.tool_wear},
            {"chip_load_mm_rev", chip_load_mm_rev(state_)}};
  }

  /// Accepts spindle_rpm and/or feed_mm_s; applied at the next tick.
  node::CommandOutcome set_params(const nlohmann::json &args, const std::string &origin) override {
    Pending p;
    p.origin = origin;
    p.params = args;
    for (const auto &[k, v] : args.items()) {
      if (k != "spindle_rpm" && k != "feed_mm_s")
        return reject(args, origin, "UnknownParam(" + k + ")");
      if (!v.is_number())
        return reject(args, origin, "InvalidValue(" + k + ")");
      double x = v.get<double>();
      bool rpm = k == "spindle_rpm";
      double lo = rpm ? rpm_min : feed_min, hi = rpm ? rpm_max : feed_max;
      if (!(x >= lo && x <= hi))
        return reject(args, origin, "OutOfBounds(" + k + ")");
      (rpm ? p.spindle_rpm : p.feed_mm_s) = x;
    }
    if (!p.spindle_rpm && !p.feed_mm_s)
      return reject(args, origin, "InvalidValue(params)");
    std::lock_guard lock(cmd_mu_);
    pending_.push_back(std::move(p));
    return {};
  }

  const MachineState &state() const { return state_; }
  const EnvState &env() const { return env_; }

  double severity_at(std::int64_t t_us) const {
    const double t = seconds(t_us);
    double s = 0;
    for (const auto &e : cfg_.defect_episodes)
      if (t >= e.t_start_s && t < e.t_end_s)
        s = std::max(s, e.severity);
    return s;
  }

  /// Ground-truth risk of the current state at t_us (test and debug use).
  double risk_now(std::int64_t t_us) const {
    auto s = state_;
    s.vacuum_airflow_m_s = airflow_clean(cfg_.airflow, severity_at(t_us));
    return ground_truth_risk(s, severity_at(t_us), cfg_.risk);
  }

  /// Risk for hypothetical setpoints under the current wear and t_us.
  double risk_with(double rpm, double feed, std::int64_t t_us) const {
    auto s = state_;
    s.spindle_rpm = rpm;
    s.feed_mm_s = feed;
    s.vacuum_airflow_m_s = airflow_clean(cfg_.airflow, severity_at(t_us));
    return ground_truth_risk(s, severity_at(t_us), cfg_.risk);
  }

  const std::vector<LabelRow> &labels() const { return labels_; }

  void flush_samples() {
    for (auto &[sig, run] : runs_) {
      if (run.values.empty())
        continue;
      write({{"kind", "samples"}, {"signal", sig}, {"t_us", run.t0}, {"fs_hz", run.fs}, {"values", run.values}});
      run.values.clear();
    }
    if (log_)
      log_->flush();
  }

private:
  struct Pending {
    std::string origin;
    nlohmann::json params;
    std::optional<double> spindle_rpm, feed_mm_s;
  };
  struct Run {
    std::int64_t t0 = 0;
    double fs = 0;
    std::vector<double> values;
  };

  double seconds(std::int64_t t_us) const { return static_cast<double>(t_us - cfg_.start_us) * 1e-6; }

  double value(const std::string &signal, std::uint64_t h, std::int64_t t_us) const {
    const std::int64_t key = t_us - cfg_.start_us;
    auto noise = [&](double sd) { return sd > 0 ? sd * keyed_normal(cfg_.seed, h, key) : 0.0; };
    if (signal.rfind("vib_", 0) == 0) {
      int axis = signal[4] - 'x';
      return vibration_clean(state_, cfg_.vibration, axis, seconds(t_us)) + noise(cfg_.vibration.noise_sd);
    }
    if (signal == "airflow_speed")
      return airflow_clean(cfg_.airflow, severity_at(t_us)) + noise(cfg_.airflow.noise_sd);
    if (signal == "airflow_temp")
      return cfg_.airflow.temp_base_c + cfg_.airflow.temp_per_feed * state_.feed_mm_s +
             noise(cfg_.airflow.temp_noise_sd);
    const double n = noise(cfg_.ambient.sensor_noise_sd);
    if (signal == "amb_temp")
      return env_.temp_c + n;
    if (signal == "amb_humidity")
      return std::clamp(env_.humidity_pct + n, 0.0, 100.0);
    return env_.pressure_hpa + n;
  }

  void record_sample(const std::string &signal, std::int64_t t_us, double v) {
    if (!log_)
      return;
    auto &run = runs_[signal];
    const double fs = cfg_.signal_rates.count(signal) ? cfg_.signal_rates.at(signal) : 1.0;
    if (!run.values.empty() && run.fs == fs) {
      auto expect = run.t0 + std::llround(static_cast<double>(run.values.size()) * 1e6 / fs);
      if (expect == t_us) {
        run.values.push_back(v);
        return;
      }
    }
    if (!run.values.empty()) {
      write({{"kind", "samples"}, {"signal", signal}, {"t_us", run.t0}, {"fs_hz", run.fs}, {"values", run.values}});
      run.values.clear();
    }
    run.t0 = t_us;
    run.fs = fs;
    run.values.push_back(v);
  }

  void walk_ambient() {
    auto &r = *ambient_rng_;
    const auto &a = cfg_.ambient;
    auto step = [&](double &x, double x0, double sd, double dev) {
      x = std::clamp(x + r.normal(0.0, sd), x0 - dev, x0 + dev);
    };
    step(env_.temp_c, env0_.temp_c, a.step_temp, a.max_dev_temp);
    step(env_.humidity_pct, env0_.humidity_pct, a.step_humidity, a.max_dev_humidity);
    env_.humidity_pct = std::clamp(env_.humidity_pct, 0.0, 100.0);
    step(env_.pressure_hpa, env0_.pressure_hpa, a.step_pressure, a.max_dev_pressure);
  }

  void draw_labels(std::int64_t from, std::int64_t to) {
    while (true) {
      const std::int64_t t = cfg_.start_us + next_label_ * 1'000'000 + 500'000;
      if (t >= to || t >= cfg_.end_us())
        return;
      if (t < from) {
        ++next_label_; // tick jumped past it
        continue;
      }
      LabelRow row;
      row.t_us = t;
      row.severity = severity_at(t);
      row.p = risk_now(t);
      row.defect = labels_rng_->bernoulli(row.p);
      labels_.push_back(row);
      write({{"kind", "label"}, {"t_us", t}, {"p", row.p}, {"defect", row.defect}, {"severity", row.severity}});
      ++next_label_;
    }
  }

  void log_state(std::int64_t t_us) {
    write({{"kind", "state"},
           {"t_us", t_us},
           {"spindle_rpm", state_.spindle_rpm},
           {"feed_mm_s", state_.feed_mm_s},
           {"tool_wear", state_.tool_wear},
           {"vacuum_airflow_m_s", state_.vacuum_airflow_m_s},
           {"cutting", state_.cutting}});
  }

  node::CommandOutcome reject(const nlohmann::json &args, const std::string &origin, std::string reason) {
    write({{"kind", "command"},
           {"t_us", tick_start_},
           {"origin", origin},
           {"params", args},
           {"applied", false},
           {"reason", reason}});
    return {false, std::move(reason)};
  }

  void write(const nlohmann::json &line) {
    if (log_)
      *log_ << line.dump() << '\n';
  }

  ScenarioConfig cfg_;
  std::ostream *log_;
  MachineState state_;
  EnvState env0_, env_;
  std::optional<Stream> labels_rng_, ambient_rng_;
  std::map<std::string, std::uint64_t> name_hash_;
  std::map<std::string, Run> runs_;
  std::mutex cmd_mu_;
  std::vector<Pending> pending_;
  std::vector<LabelRow> labels_;
  std::size_t next_schedule_ = 0;
  std::int64_t next_label_ = 0;
  std::int64_t tick_start_ = 0;
  double last_airflow_ = -1;
  bool started_ = false;
  bool logged_state_ = false;
};

} // namespace dsm::sim
