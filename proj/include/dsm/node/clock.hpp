#pragma once

#include <cmath>
#include <cstdint>

#include "dsm/core/error.hpp"

namespace dsm::node {

/// Node oscillator model. true_offset_us and drift_ppm describe how the raw
/// local clock departs from reference time; applied_correction_us is what the
/// node has learned from sync exchanges.
struct ClockModel {
  std::int64_t true_offset_us = 0;
  double drift_ppm = 0.0;
  std::int64_t applied_correction_us = 0;
  std::int64_t epoch_us = 0; // reference instant where drift starts accumulating

  static constexpr double max_drift_ppm = 500.0;

  void validate() const {
    if (!std::isfinite(drift_ppm) || std::abs(drift_ppm) > max_drift_ppm)
      throw Error(Errc::invalid_value, "drift_ppm", "|drift_ppm| must be <= 500");
  }

  std::int64_t local_us(std::int64_t true_us) const {
    double drift = drift_ppm * static_cast<double>(true_us - epoch_us) * 1e-6;
    return true_us + true_offset_us + static_cast<std::int64_t>(std::llround(drift));
  }

  std::int64_t corrected_us(std::int64_t true_us) const {
    return local_us(true_us) + applied_correction_us;
  }
};

struct SyncEstimate {
  std::int64_t offset_us = 0;
  std::int64_t delay_us = 0;
  bool operator==(const SyncEstimate &) const = default;
};

inline std::int64_t floor_half(std::int64_t v) {
  return v >= 0 ? v / 2 : -((-v + 1) / 2);
}

/// Two-way exchange: t1 request sent (node clock), t2 received and t3 answered
/// (reference clock), t4 answer received (node clock).
inline SyncEstimate sync_exchange(std::int64_t t1, std::int64_t t2, std::int64_t t3,
                                  std::int64_t t4) {
  if (t4 < t1)
    throw Error(Errc::non_causal_timestamps, "t4", "t4 < t1");
  if (t3 < t2)
    throw Error(Errc::non_causal_timestamps, "t3", "t3 < t2");
  return {floor_half((t2 - t1) + (t3 - t4)), (t4 - t1) - (t3 - t2)};
}

inline void apply_sync(ClockModel &clock, const SyncEstimate &est) {
  clock.applied_correction_us += est.offset_us;
}

} // namespace dsm::node
