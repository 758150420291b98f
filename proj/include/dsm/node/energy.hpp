#pragma once

#include <cmath>
#include <cstddef>

#include "dsm/core/error.hpp"
#include "dsm/measurement/message.hpp"

namespace dsm::node {

/// Accounting model for the processing/radio tradeoff. Units are abstract.
struct EnergyModel {
  double cost_per_sample_cpu = 1.0;
  double cost_per_feature_cpu = 50.0;
  double cost_per_byte_radio = 2.0;
  double budget = 1e9;

  void validate() const {
    auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!ok(cost_per_sample_cpu))
      throw Error(Errc::invalid_value, "cost_per_sample_cpu", "must be >= 0");
    if (!ok(cost_per_feature_cpu))
      throw Error(Errc::invalid_value, "cost_per_feature_cpu", "must be >= 0");
    if (!ok(cost_per_byte_radio))
      throw Error(Errc::invalid_value, "cost_per_byte_radio", "must be >= 0");
    if (!(budget > 0.0) || !std::isfinite(budget))
      throw Error(Errc::invalid_value, "budget", "must be > 0");
  }
};

/// Features evaluated on the node for one window. The hybrid mode leaves the
/// spectral feature to the gateway.
constexpr std::size_t features_computed(ProcessingMode mode, std::size_t window_len) noexcept {
  switch (mode) {
  case ProcessingMode::raw: return 0;
  case ProcessingMode::features: return window_len >= 8 ? 7 : 6;
  case ProcessingMode::hybrid: return 6;
  }
  return 0;
}

struct EnergyCost {
  double cpu = 0.0;
  double radio = 0.0;
  double total() const { return cpu + radio; }
};

inline EnergyCost energy_cost(ProcessingMode mode, std::size_t window_len,
                              std::size_t bytes_sent, const EnergyModel &m) {
  EnergyCost c;
  c.cpu = m.cost_per_sample_cpu * static_cast<double>(window_len) +
          m.cost_per_feature_cpu * static_cast<double>(features_computed(mode, window_len));
  c.radio = m.cost_per_byte_radio * static_cast<double>(bytes_sent);
  return c;
}

class EnergyMeter {
public:
  explicit EnergyMeter(EnergyModel model = {}) : model_(model) { model_.validate(); }

  void add_cpu(ProcessingMode mode, std::size_t window_len) {
    cpu_ += energy_cost(mode, window_len, 0, model_).cpu;
  }
  void add_radio(std::size_t bytes) {
    radio_ += model_.cost_per_byte_radio * static_cast<double>(bytes);
  }

  double cpu() const { return cpu_; }
  double radio() const { return radio_; }
  double spent() const { return cpu_ + radio_; }
  double battery_fraction() const { return 1.0 - spent() / model_.budget; }
  const EnergyModel &model() const { return model_; }

private:
  EnergyModel model_;
  double cpu_ = 0.0;
  double radio_ = 0.0;
};

} // namespace dsm::node
