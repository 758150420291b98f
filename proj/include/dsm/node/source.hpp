#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "dsm/core/error.hpp"
#include "dsm/measurement/message.hpp"

namespace dsm::node {

/// A continuous signal the node samples at instants of its choosing. Calls
/// for one signal arrive in increasing time order.
class SignalSource {
public:
  virtual ~SignalSource() = default;
  /// Throws SourceExhausted when the signal has no value at t_us.
  virtual double sample(const std::string &signal, std::int64_t t_us) = 0;
};

struct CommandOutcome {
  bool ok = true;
  std::string reason;
};

/// The machine controller seen from its node: a state snapshot per window
/// and a parameter intake.
class MachinePort {
public:
  virtual ~MachinePort() = default;
  virtual FeatureMap snapshot(std::int64_t t_us) = 0;
  virtual CommandOutcome set_params(const nlohmann::json &args, const std::string &origin) = 0;
};

/// Replays `samples` lines of a session log, matching sample instants exactly.
class ReplaySource : public SignalSource {
public:
  explicit ReplaySource(const std::string &path) {
    std::ifstream in(path);
    if (!in)
      throw Error(Errc::io_error, path, "cannot open replay file");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty())
        continue;
      auto doc = nlohmann::json::parse(line, nullptr, false);
      if (doc.is_discarded() || doc.value("kind", "") != "samples")
        continue;
      add(doc.at("signal").get<std::string>(), doc.at("t_us").get<std::int64_t>(),
          doc.at("fs_hz").get<double>(), doc.at("values").get<std::vector<double>>());
    }
  }

  ReplaySource() = default;

  void add(const std::string &signal, std::int64_t t0, double fs, const std::vector<double> &values) {
    auto &m = series_[signal];
    for (std::size_t i = 0; i < values.size(); ++i)
      m[t0 + std::llround(static_cast<double>(i) * 1e6 / fs)] = values[i];
  }

  double sample(const std::string &signal, std::int64_t t_us) override {
    auto s = series_.find(signal);
    if (s == series_.end())
      throw Error(Errc::source_exhausted, signal, "no such signal in replay");
    auto it = s->second.find(t_us);
    if (it == s->second.end())
      throw Error(Errc::source_exhausted, signal, "no sample at t=" + std::to_string(t_us));
    return it->second;
  }

private:
  std::map<std::string, std::map<std::int64_t, double>> series_;
};

} // namespace dsm::node
