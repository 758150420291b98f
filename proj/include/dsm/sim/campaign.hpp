#pragma once

// Phase-1 data collection plan: a batch of short sessions with randomized
// tool wear, operating regimes and defect episodes.

#include <string>
#include <vector>

#include "dsm/core/config_reader.hpp"
#include "dsm/sim/rng.hpp"
#include "dsm/sim/scenario.hpp"

namespace dsm::sim {

struct Regime {
  double weight = 1;
  double rpm_lo = 3000, rpm_hi = 24000;
  double feed_lo = 1, feed_hi = 50;
};

struct CampaignConfig {
  std::size_t sessions = 20;
  double session_s = 10;
  std::uint64_t seed = 7;
  std::int64_t start_us = 1'700'000'000'000'000;
  double gap_s = 60; // idle time between sessions
  double episode_probability = 0.8;
  double episode_start_lo_s = 1, episode_start_hi_s = 7;
  double episode_length_s = 3;
  double episode_severity = 1;
  double segment_s = 2;
  double tool_change_probability = 0.5;
  std::vector<Regime> regimes{{0.5, 15000, 24000, 1, 8}, {0.5, 3000, 8000, 20, 50}};
  ScenarioConfig base; // plant constants and rates shared by every session
};

inline CampaignConfig campaign_from_json(const json &doc, const std::string &path = "campaign") {
  CampaignConfig c;
  ConfigReader r(doc, path);
  c.sessions = r.count("sessions", c.sessions);
  c.session_s = r.number("session_s", c.session_s);
  c.seed = r.count("seed", c.seed);
  c.start_us = r.integer("start_us", c.start_us);
  c.gap_s = r.number("gap_s", c.gap_s);
  c.episode_probability = r.number("episode_probability", c.episode_probability);
  c.episode_start_lo_s = r.number("episode_start_lo_s", c.episode_start_lo_s);
  c.episode_start_hi_s = r.number("episode_start_hi_s", c.episode_start_hi_s);
  c.episode_length_s = r.number("episode_length_s", c.episode_length_s);
  c.episode_severity = r.number("episode_severity", c.episode_severity);
  c.segment_s = r.number("segment_s", c.segment_s);
  c.tool_change_probability = r.number("tool_change_probability", c.tool_change_probability);
  if (r.has("regimes")) {
    c.regimes.clear();
    const auto &arr = r.array("regimes");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ConfigReader o(arr[i], r.at("regimes") + "[" + std::to_string(i) + "]");
      Regime g;
      g.weight = o.number("weight", 1);
      g.rpm_lo = o.number("rpm_lo");
      g.rpm_hi = o.number("rpm_hi");
      g.feed_lo = o.number("feed_lo");
      g.feed_hi = o.number("feed_hi");
      o.finish();
      if (!(g.weight > 0) || g.rpm_lo < rpm_min || g.rpm_hi > rpm_max || g.rpm_lo > g.rpm_hi ||
          g.feed_lo < feed_min || g.feed_hi > feed_max || g.feed_lo > g.feed_hi)
        throw Error(Errc::config_invalid, o.at("rpm_lo"), "regime outside machine bounds");
      c.regimes.push_back(g);
    }
  }
  if (r.has("plant")) {
    json p = r.raw("plant");
    p["duration_s"] = c.session_s;
    c.base = scenario_from_json(p, r.at("plant"));
  }
  r.finish();
  auto bad = [&](const std::string &k, const std::string &why) { throw Error(Errc::config_invalid, path + "." + k, why); };
  if (c.sessions == 0)
    bad("sessions", "must be >= 1");
  if (!(c.session_s > 0))
    bad("session_s", "must be > 0");
  if (!(c.segment_s > 0))
    bad("segment_s", "must be > 0");
  if (c.regimes.empty())
    bad("regimes", "at least one regime");
  if (!(c.episode_probability >= 0 && c.episode_probability <= 1))
    bad("episode_probability", "outside [0, 1]");
  if (!(c.tool_change_probability >= 0 && c.tool_change_probability <= 1))
    bad("tool_change_probability", "outside [0, 1]");
  if (!(c.episode_start_lo_s >= 0 && c.episode_start_lo_s <= c.episode_start_hi_s &&
        c.episode_start_hi_s + c.episode_length_s <= c.session_s))
    bad("episode_start_hi_s", "episodes must fit inside a session");
  return c;
}

/// Expands the plan into one scenario per session; pure function of the config.
inline std::vector<ScenarioConfig> expand_campaign(const CampaignConfig &c) {
  Stream rng(c.seed, "campaign");
  double total = 0;
  for (const auto &g : c.regimes)
    total += g.weight;
  std::vector<ScenarioConfig> out;
  for (std::size_t i = 0; i < c.sessions; ++i) {
    ScenarioConfig s = c.base;
    s.session_id = "s" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    s.duration_s = c.session_s;
    s.seed = splitmix64(c.seed + i);
    s.start_us = c.start_us + static_cast<std::int64_t>(i) *
                                  static_cast<std::int64_t>(std::llround((c.session_s + c.gap_s) * 1e6));
    s.defect_episodes.clear();
    s.schedule.clear();
    double wear = rng.uniform(0, 1);
    if (rng.uniform() < c.episode_probability) {
      double t0 = rng.uniform(c.episode_start_lo_s, c.episode_start_hi_s);
      s.defect_episodes.push_back({t0, t0 + c.episode_length_s, c.episode_severity});
    }
    for (double t = 0; t < c.session_s - 1e-9; t += c.segment_s) {
      ScheduleEntry e;
      e.t_s = t;
      if (t > 0 && rng.uniform() < c.tool_change_probability)
        e.tool_wear = rng.uniform(0, 1);
      double u = rng.uniform() * total;
      const Regime *g = &c.regimes.back();
      for (const auto &cand : c.regimes) {
        if (u < cand.weight) {
          g = &cand;
          break;
        }
        u -= cand.weight;
      }
      e.spindle_rpm = rng.uniform(g->rpm_lo, g->rpm_hi);
      e.feed_mm_s = rng.uniform(g->feed_lo, g->feed_hi);
      if (t == 0) {
        s.initial.spindle_rpm = *e.spindle_rpm;
        s.initial.feed_mm_s = *e.feed_mm_s;
        s.initial.tool_wear = wear;
      } else {
        s.schedule.push_back(e);
      }
    }
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

} // namespace dsm::sim
