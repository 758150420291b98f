#pragma once

#include <span>

#include "dsm/dsp/features.hpp"
#include "dsm/measurement/message.hpp"

namespace dsm::node {

/// Payload for one acquired window under the given configuration.
/// Mode 3 carries the decimated stream plus the six shape features; the
/// spectral feature is left to post-processing on the gateway.
inline Payload apply_mode(std::span<const double> window, ProcessingMode mode,
                          std::size_t decimation_factor, double fs_hz) {
  if (window.empty())
    throw Error(Errc::window_too_short, "window", "empty window");
  switch (mode) {
  case ProcessingMode::raw:
    return RawPayload{{window.begin(), window.end()}};
  case ProcessingMode::features:
    return FeaturePayload{dsp::full_features(window, fs_hz).to_map()};
  case ProcessingMode::hybrid:
    return HybridPayload{dsp::decimate(window, decimation_factor),
                         dsp::window_features(window).to_map()};
  }
  throw Error(Errc::invariant_violation, "mode", "unknown processing mode");
}

} // namespace dsm::node
