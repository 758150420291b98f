#pragma once

// On-node pre-processing: shape features, dominant frequency, threshold
// events and block-mean decimation.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsm/core/error.hpp"
#include "dsm/dsp/spectrum.hpp"
#include "dsm/measurement/message.hpp"

namespace dsm::dsp {

inline constexpr std::string_view feature_min = "min";
inline constexpr std::string_view feature_max = "max";
inline constexpr std::string_view feature_mean = "mean";
inline constexpr std::string_view feature_rms = "rms";
inline constexpr std::string_view feature_p2p = "p2p";
inline constexpr std::string_view feature_std = "std";
inline constexpr std::string_view feature_dom_freq = "dom_freq_hz";

inline constexpr std::array<std::string_view, 7> all_feature_names{
    feature_min, feature_max, feature_mean,    feature_rms,
    feature_p2p, feature_std, feature_dom_freq};

inline bool is_known_feature(std::string_view name) {
  return std::find(all_feature_names.begin(), all_feature_names.end(), name) !=
         all_feature_names.end();
}

struct FeatureSet {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double rms = 0.0;
  double p2p = 0.0;
  double std = 0.0;
  std::optional<double> dom_freq_hz;

  FeatureMap to_map() const {
    FeatureMap m{{std::string(feature_min), min},
                 {std::string(feature_max), max},
                 {std::string(feature_mean), mean},
                 {std::string(feature_rms), rms},
                 {std::string(feature_p2p), p2p},
                 {std::string(feature_std), std}};
    if (dom_freq_hz)
      m.emplace(std::string(feature_dom_freq), *dom_freq_hz);
    return m;
  }
};

/// min, max, mean, rms, p2p and population std over the window.
inline FeatureSet window_features(std::span<const double> x) {
  if (x.size() < 2)
    throw Error(Errc::window_too_short, "window",
                "need >= 2 samples, got " + std::to_string(x.size()));
  const double n = static_cast<double>(x.size());
  FeatureSet f;
  auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  f.min = *lo;
  f.max = *hi;
  f.p2p = f.max - f.min;
  if (f.min == f.max) {
    f.mean = f.min;
    f.rms = std::abs(f.min);
    f.std = 0.0;
    return f;
  }
  // Offset by the first sample so the mean of a near-constant window stays
  // exact; clamp covers the last-ulp case.
  const double x0 = x[0];
  double dev = 0.0;
  double sq = 0.0;
  for (double v : x) {
    dev += v - x0;
    sq += v * v;
  }
  f.mean = std::clamp(x0 + dev / n, f.min, f.max);
  f.rms = std::sqrt(sq / n);
  double var = 0.0;
  for (double v : x) {
    double d = v - f.mean;
    var += d * d;
  }
  f.std = std::sqrt(var / n);
  return f;
}

/// Magnitudes |X[k]| of the mean-removed, Hann-tapered window, k = 0..N/2.
inline std::vector<double> tapered_magnitudes(std::span<const double> x) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x)
    mean += v;
  mean /= static_cast<double>(n);
  auto w = hann(n);
  std::vector<double> tapered(n);
  for (std::size_t i = 0; i < n; ++i)
    tapered[i] = (x[i] - mean) * w[i];
  auto spec = dft(std::span<const double>(tapered));
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k)
    mag[k] = std::abs(spec[k]);
  return mag;
}

inline constexpr double spectral_noise_floor = 1e-12;

/// Bin-centre frequency of the largest magnitude over bins 1..N/2.
inline double dominant_frequency(std::span<const double> x, double fs_hz) {
  if (x.size() < 8)
    throw Error(Errc::window_too_short, "window",
                "need >= 8 samples, got " + std::to_string(x.size()));
  if (!(fs_hz > 0.0) || !std::isfinite(fs_hz))
    throw Error(Errc::invalid_value, "fs_hz", "must be > 0");
  auto mag = tapered_magnitudes(x);
  std::size_t best = 1;
  for (std::size_t k = 2; k < mag.size(); ++k)
    if (mag[k] > mag[best])
      best = k;
  if (!(mag[best] > spectral_noise_floor))
    throw Error(Errc::all_zero_signal, "window",
                "no bin above the noise floor");
  return static_cast<double>(best) * fs_hz / static_cast<double>(x.size());
}

/// window_features plus dominant frequency when it is defined.
inline FeatureSet full_features(std::span<const double> x, double fs_hz) {
  auto f = window_features(x);
  if (x.size() >= 8) {
    try {
      f.dom_freq_hz = dominant_frequency(x, fs_hz);
    } catch (const Error &e) {
      if (e.code() != Errc::all_zero_signal)
        throw;
    }
  }
  return f;
}

struct Thresholds {
  double rising = 0.0;
  double falling = 0.0;
};

enum class EventKind { rising, falling };

constexpr std::string_view to_string(EventKind k) noexcept {
  return k == EventKind::rising ? "rising" : "falling";
}

struct Event {
  std::size_t index = 0;
  EventKind kind = EventKind::rising;
  bool operator==(const Event &) const = default;
};

/// Hysteresis crossing detector; every window starts in the "below" state.
inline std::vector<Event> detect_events(std::span<const double> x,
                                        const Thresholds &th) {
  if (!std::isfinite(th.rising) || !std::isfinite(th.falling) ||
      th.rising < th.falling)
    throw Error(Errc::bad_thresholds, "thresholds",
                "require finite rising >= falling");
  std::vector<Event> out;
  bool above = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!above && x[i] >= th.rising) {
      above = true;
      out.push_back({i, EventKind::rising});
    } else if (above && x[i] <= th.falling) {
      above = false;
      out.push_back({i, EventKind::falling});
    }
  }
  return out;
}

/// Mean of each consecutive factor-sized block.
inline std::vector<double> decimate(std::span<const double> x,
                                    std::size_t factor) {
  if (factor < 1 || x.size() % factor != 0)
    throw Error(Errc::bad_factor, "factor",
                std::to_string(factor) + " does not divide " +
                    std::to_string(x.size()));
  std::vector<double> out;
  out.reserve(x.size() / factor);
  for (std::size_t i = 0; i < x.size(); i += factor) {
    const double x0 = x[i];
    double dev = 0.0;
    for (std::size_t j = 0; j < factor; ++j)
      dev += x[i + j] - x0;
    out.push_back(x0 + dev / static_cast<double>(factor));
  }
  return out;
}

} // namespace dsm::dsp
