#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dsm/core/error.hpp"

namespace dsm::dsp {

struct AdcSpec {
  int bits = 12;
  double v_min = 0.0;
  double v_max = 3.3;

  std::uint32_t max_code() const noexcept {
    return static_cast<std::uint32_t>((std::uint64_t{1} << bits) - 1);
  }
};

/// Conditioning-circuit calibration: value = gain * volts + offset.
struct Calibration {
  double gain = 1.0;
  double offset = 0.0;
};

inline void validate(const AdcSpec &spec) {
  if (spec.bits < 1 || spec.bits > 24)
    throw Error(Errc::invalid_value, "bits", "must be in [1, 24]");
  if (!(spec.v_min < spec.v_max))
    throw Error(Errc::invalid_value, "v_range", "v_min must be < v_max");
}

inline void validate(const Calibration &cal) {
  if (cal.gain == 0.0 || !std::isfinite(cal.gain))
    throw Error(Errc::invalid_value, "gain", "must be finite and non-zero");
}

inline std::uint32_t quantize_one(double v, const AdcSpec &spec) {
  const double full = spec.max_code();
  double scaled = (v - spec.v_min) / (spec.v_max - spec.v_min) * full + 0.5;
  if (!(scaled >= 0.0)) // also catches NaN
    return 0;
  if (scaled >= full + 1.0)
    return spec.max_code();
  auto code = static_cast<std::uint32_t>(std::floor(scaled));
  return code > spec.max_code() ? spec.max_code() : code;
}

/// Ideal ADC with round-to-nearest and clipping at both rails.
inline std::vector<std::uint32_t> quantize(std::span<const double> analog,
                                          const AdcSpec &spec) {
  validate(spec);
  std::vector<std::uint32_t> out;
  out.reserve(analog.size());
  for (double v : analog)
    out.push_back(quantize_one(v, spec));
  return out;
}

inline std::vector<double> to_engineering_units(
    std::span<const std::uint32_t> codes, const AdcSpec &spec,
    const Calibration &cal) {
  validate(spec);
  validate(cal);
  const double full = spec.max_code();
  std::vector<double> out;
  out.reserve(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > spec.max_code())
      throw Error(Errc::code_out_of_range, "codes[" + std::to_string(i) + "]",
                  std::to_string(codes[i]));
    double volts = spec.v_min + codes[i] / full * (spec.v_max - spec.v_min);
    out.push_back(cal.gain * volts + cal.offset);
  }
  return out;
}

} // namespace dsm::dsp
