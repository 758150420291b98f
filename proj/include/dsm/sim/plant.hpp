#pragma once

// Response functions of the simulated trimming cell. All coefficients are
// invented plant truth, kept together so tests can check recovery
// against them.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace dsm::sim {

inline constexpr double rpm_min = 3000, rpm_max = 24000;
inline constexpr double feed_min = 1, feed_max = 50;

struct MachineState {
  double spindle_rpm = 12000;
  double feed_mm_s = 10;
  double tool_wear = 0;
  double vacuum_airflow_m_s = 8;
  bool cutting = true;
};

struct EnvState {
  double temp_c = 21.0;
  double humidity_pct = 45.0;
  double pressure_hpa = 1013.0;
};

/// p = sigma(c0 + c1 feed + c2 wear + c3 feed/(rpm/1000) + c4 severity - c5 airflow)
struct RiskCoefficients {
  std::array<double, 6> c{-6.0, 0.15, 3.0, 2.0, 4.0, 0.5};
};

struct VibrationModel {
  double a0 = 0.5; // m/s^2
  double a1 = 0.05;
  double a2 = 2.0;
  double noise_sd = 0.05;
  std::array<double, 3> axis_gain{1.0, 0.7, 0.4};
};

struct AirflowModel {
  double nominal_m_s = 8.0;
  double leak_per_severity = 5.0;
  double noise_sd = 0.2;
  double temp_base_c = 22.0;
  double temp_per_feed = 0.1;
  double temp_noise_sd = 0.05;
};

struct AmbientModel {
  double step_temp = 0.01; // random-walk step sd per tick
  double step_humidity = 0.02;
  double step_pressure = 0.01;
  double max_dev_temp = 2.0; // walk stays within initial +- max_dev
  double max_dev_humidity = 5.0;
  double max_dev_pressure = 3.0;
  double sensor_noise_sd = 0.01;
};

inline double logistic(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

inline double ground_truth_risk(const MachineState &s, double severity, const RiskCoefficients &k = {}) {
  const auto &c = k.c;
  double z = c[0] + c[1] * s.feed_mm_s + c[2] * s.tool_wear + c[3] * s.feed_mm_s / (s.spindle_rpm / 1000.0) +
             c[4] * severity - c[5] * s.vacuum_airflow_m_s;
  return logistic(z);
}

inline double vibration_amplitude(const MachineState &s, const VibrationModel &v) {
  return v.a0 * (1 + v.a1 * s.feed_mm_s) * (1 + v.a2 * s.tool_wear);
}

/// Noise-free vibration on one axis at t seconds.
inline double vibration_clean(const MachineState &s, const VibrationModel &v, int axis, double t_s) {
  const double A = vibration_amplitude(s, v) * v.axis_gain[static_cast<std::size_t>(axis)];
  const double fr = s.spindle_rpm / 60.0;
  return A * std::sin(2 * std::numbers::pi * fr * t_s) + 0.3 * A * std::sin(4 * std::numbers::pi * fr * t_s);
}

inline double airflow_clean(const AirflowModel &a, double severity) {
  return std::max(0.0, a.nominal_m_s - a.leak_per_severity * severity);
}

inline double chip_load_mm_rev(const MachineState &s) { return 60.0 * s.feed_mm_s / s.spindle_rpm; }

} // namespace dsm::sim
